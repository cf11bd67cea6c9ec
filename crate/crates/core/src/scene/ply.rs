//! Binary little-endian PLY scene files.
//!
//! Layout: one `vertex` element with float32 properties `x y z opacity
//! rot_0..rot_3 scale_0..scale_2 f_dc_0..f_dc_2` and, at degree 1,
//! `f_rest_0..f_rest_8`. The degree is carried in a `comment sh_degree <d>`
//! header line. Scales and opacity are stored raw. `f_rest` is channel-major
//! (`f_rest_{3·ch + j}` holds band-1 coefficient `j` of channel `ch`).

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::sh::{basis_count, coeff_len, MAX_SH_DEGREE};
use super::{GaussianPrimitive, GaussianScene};
use crate::error::{Error, Result};

fn property_names(degree: u8) -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "opacity"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    let rest = coeff_len(degree) - 3;
    names.extend((0..rest).map(|i| format!("f_rest_{i}")));
    names
}

pub fn save_scene(scene: &GaussianScene, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_scene(scene, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<GaussianScene> {
    read_scene(&mut BufReader::new(File::open(path)?))
}

pub fn write_scene<W: Write>(scene: &GaussianScene, w: &mut W) -> Result<()> {
    let degree = scene.sh_degree();
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "comment sh_degree {degree}")?;
    writeln!(w, "element vertex {}", scene.len())?;
    for name in property_names(degree) {
        writeln!(w, "property float {name}")?;
    }
    writeln!(w, "end_header")?;
    let nb = basis_count(degree);
    for p in scene.primitives() {
        let mut row: Vec<f64> = Vec::with_capacity(14 + 3 * nb);
        row.extend_from_slice(&p.center());
        row.push(p.opacity());
        row.extend_from_slice(&p.rotation());
        row.extend_from_slice(&p.scale());
        row.extend_from_slice(&p.sh()[..3]);
        for ch in 0..3 {
            for j in 1..nb {
                row.push(p.sh()[3 * j + ch]);
            }
        }
        for v in row {
            w.write_f32::<LittleEndian>(v as f32)?;
        }
    }
    Ok(())
}

pub fn read_scene<R: BufRead>(r: &mut R) -> Result<GaussianScene> {
    let mut line = String::new();
    let mut next_line = |r: &mut R| -> Result<String> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Header("unexpected end of header".into()));
        }
        Ok(line.trim_end_matches(['\n', '\r']).to_string())
    };
    if next_line(r)? != "ply" {
        return Err(Error::Header("missing ply magic".into()));
    }
    let mut degree: Option<u8> = None;
    let mut count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut saw_format = false;
    loop {
        let l = next_line(r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", "1.0"] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::Header(format!("unsupported format {other}")))
            }
            ["comment", "sh_degree", d] => {
                degree = Some(
                    d.parse()
                        .map_err(|_| Error::Header(format!("bad sh_degree {d}")))?,
                )
            }
            ["comment", ..] => {}
            ["element", "vertex", n] => {
                if count.is_some() {
                    return Err(Error::Header("duplicate vertex element".into()));
                }
                count = Some(
                    n.parse()
                        .map_err(|_| Error::Header(format!("bad vertex count {n}")))?,
                )
            }
            ["element", other, ..] => {
                return Err(Error::Header(format!("unexpected element {other}")))
            }
            ["property", "float", name] => props.push(name.to_string()),
            ["property", ty, ..] => {
                return Err(Error::Header(format!("unsupported property type {ty}")))
            }
            _ => return Err(Error::Header(format!("unrecognized header line `{l}`"))),
        }
    }
    if !saw_format {
        return Err(Error::Header("missing format line".into()));
    }
    let degree = degree.ok_or_else(|| Error::Header("missing sh_degree comment".into()))?;
    if degree > MAX_SH_DEGREE {
        return Err(Error::Header(format!("unsupported sh degree {degree}")));
    }
    let count = count.ok_or_else(|| Error::Header("missing vertex element".into()))?;
    let want = property_names(degree);
    if props.len() != want.len() {
        return Err(Error::Header(format!(
            "field-count mismatch: {} properties, degree {degree} expects {}",
            props.len(),
            want.len()
        )));
    }
    if let Some((got, exp)) = props.iter().zip(&want).find(|(a, b)| a != b) {
        return Err(Error::Header(format!("property `{got}` where `{exp}` expected")));
    }

    let nb = basis_count(degree);
    let mut row = vec![0f32; want.len()];
    let mut prims = Vec::with_capacity(count);
    for record in 0..count {
        r.read_f32_into::<LittleEndian>(&mut row)
            .map_err(|e| Error::Parse {
                record,
                msg: format!("truncated data: {e}"),
            })?;
        if let Some(k) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse {
                record,
                msg: format!("non-finite value in `{}`", want[k]),
            });
        }
        let v: Vec<f64> = row.iter().map(|&x| x as f64).collect();
        let mut sh = vec![0.0; 3 * nb];
        sh[..3].copy_from_slice(&v[11..14]);
        for ch in 0..3 {
            for j in 1..nb {
                sh[3 * j + ch] = v[14 + ch * (nb - 1) + (j - 1)];
            }
        }
        let prim = GaussianPrimitive::new(
            [v[0], v[1], v[2]],
            v[3],
            [v[4], v[5], v[6], v[7]],
            [v[8], v[9], v[10]],
            sh,
        )
        .map_err(|e| Error::Parse {
            record,
            msg: format!("validation: {e}"),
        })?;
        prims.push(prim);
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Parse {
            record: count,
            msg: "trailing bytes after last record".into(),
        });
    }
    GaussianScene::new(degree, prims)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(scene: &GaussianScene) -> Vec<u8> {
        let mut buf = Vec::new();
        write_scene(scene, &mut buf).unwrap();
        buf
    }

    fn decode(bytes: &[u8]) -> Result<GaussianScene> {
        read_scene(&mut &bytes[..])
    }

    fn one_prim(opacity: f64) -> GaussianPrimitive {
        GaussianPrimitive::new(
            [0.25, -1.5, 3.0],
            opacity,
            [0.5, 0.5, 0.5, 0.5],
            [0.125, 0.0625, 0.375],
            (0..12).map(|i| i as f64 * 0.125 - 0.5).collect(),
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_round_trip() {
        let s = GaussianScene::empty(1);
        let bytes = encode(&s);
        let text = String::from_utf8_lossy(&bytes);
        assert!(text.contains("element vertex 0"));
        assert_eq!(decode(&bytes).unwrap(), s);
    }

    #[test]
    fn single_primitive_round_trip() {
        let s = GaussianScene::new(1, vec![one_prim(0.75)]).unwrap();
        assert_eq!(decode(&encode(&s)).unwrap(), s);
    }

    #[test]
    fn opacity_above_one_fails_validation() {
        let s = GaussianScene::new(1, vec![one_prim(0.75), one_prim(0.75)]).unwrap();
        let mut bytes = encode(&s);
        let header_len = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let row = 4 * 23;
        let at = header_len + row + 3 * 4;
        bytes[at..at + 4].copy_from_slice(&1.5f32.to_le_bytes());
        match decode(&bytes) {
            Err(Error::Parse { record, msg }) => {
                assert_eq!(record, 1);
                assert!(msg.contains("opacity"), "{msg}");
            }
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_truncated_records_named() {
        let s = GaussianScene::new(1, vec![one_prim(0.5); 3]).unwrap();
        let bytes = encode(&s);
        let header_len = bytes.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        let mut nan = bytes.clone();
        let at = header_len + 2 * 92;
        nan[at..at + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(decode(&nan), Err(Error::Parse { record: 2, .. })));
        let cut = &bytes[..bytes.len() - 8];
        assert!(matches!(decode(cut), Err(Error::Parse { record: 2, .. })));
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode(b"plyx\n"), Err(Error::Header(_))));
        let s = GaussianScene::new(0, vec![]).unwrap();
        let text = String::from_utf8(encode(&s)).unwrap();
        let bad = text.replace("property float f_dc_2\n", "");
        assert!(matches!(decode(bad.as_bytes()), Err(Error::Header(m)) if m.contains("field-count")));
        let bad = text.replace("comment sh_degree 0\n", "");
        assert!(matches!(decode(bad.as_bytes()), Err(Error::Header(_))));
    }

    fn arb_prim(degree: u8) -> impl Strategy<Value = GaussianPrimitive> {
        let n = coeff_len(degree);
        (
            prop::array::uniform3(-10.0f64..10.0),
            0.0f64..=1.0,
            prop::array::uniform4(-1.0f64..1.0),
            prop::array::uniform3(1e-3f64..5.0),
            prop::collection::vec(-3.0f64..3.0, n),
        )
            .prop_filter_map("degenerate rotation", |(c, a, r, s, sh)| {
                let r2: f64 = r.iter().map(|v| v * v).sum();
                if r2 < 1e-3 {
                    return None;
                }
                GaussianPrimitive::new(c, a, r, s, sh).ok()
            })
    }

    proptest! {
        #[test]
        fn save_load_save_is_stable(degree in 0u8..=1, prims in prop::collection::vec(arb_prim(1), 0..20)) {
            let prims: Vec<_> = prims
                .into_iter()
                .map(|p| { let sh = p.sh()[..coeff_len(degree)].to_vec(); p.with_sh(sh) })
                .collect();
            let scene = GaussianScene::new(degree, prims).unwrap();
            let first = encode(&scene);
            let loaded = decode(&first).unwrap();
            prop_assert_eq!(loaded.len(), scene.len());
            for (a, b) in scene.primitives().iter().zip(loaded.primitives()) {
                let fa = a.center().iter().chain(&a.scale()).chain(a.sh()).copied().collect::<Vec<_>>();
                let fb = b.center().iter().chain(&b.scale()).chain(b.sh()).copied().collect::<Vec<_>>();
                for (x, y) in fa.iter().zip(&fb) {
                    prop_assert!((x - y).abs() <= x.abs() * 1.2e-7 + 1e-30);
                }
                prop_assert!((a.opacity() - b.opacity()).abs() <= 1e-7);
                for (x, y) in a.rotation().iter().zip(&b.rotation()) {
                    prop_assert!((x - y).abs() <= 2e-7);
                }
            }
            prop_assert_eq!(encode(&loaded), first);
        }
    }
}
