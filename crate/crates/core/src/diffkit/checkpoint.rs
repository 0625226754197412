//! Text checkpoint format.
//!
//! Per entry: a header line `name dim0 dim1 ...` followed by one line of
//! space-separated decimals with 17 significant digits; entries in
//! lexicographic name order. Round-trips f64 values bit-exactly.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt::Write as _;

use crate::error::{Error, Result};
use super::params::ParameterSet;

/// 17 significant digits; enough to reconstruct any finite f64 exactly.
pub fn fmt_f64(v: f64) -> String {
    alloc::format!("{v:.16e}")
}

pub type EntryMap = BTreeMap<String, (Vec<usize>, Vec<f64>)>;

/// Encode parameter sets (values only), each under a name prefix, plus any
/// extra raw entries (e.g. optimizer moments).
pub fn encode(
    sections: &[(&str, &ParameterSet)],
    extra: &[(String, Vec<usize>, Vec<f64>)],
) -> String {
    let mut map: EntryMap = BTreeMap::new();
    for (prefix, ps) in sections {
        for (name, e) in ps.iter() {
            let full = if prefix.is_empty() {
                name.clone()
            } else {
                alloc::format!("{prefix}.{name}")
            };
            map.insert(full, (e.shape.clone(), e.values.clone()));
        }
    }
    for (name, shape, values) in extra {
        map.insert(name.clone(), (shape.clone(), values.clone()));
    }
    let mut out = String::new();
    for (name, (shape, values)) in &map {
        let _ = write!(out, "{name}");
        for d in shape {
            let _ = write!(out, " {d}");
        }
        out.push('\n');
        for (i, v) in values.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", fmt_f64(*v));
        }
        out.push('\n');
    }
    out
}

pub fn decode(text: &str) -> Result<EntryMap> {
    let mut map = EntryMap::new();
    let mut lines = text.lines().enumerate();
    while let Some((ln, header)) = lines.next() {
        if header.trim().is_empty() {
            continue;
        }
        let mut parts = header.split_whitespace();
        let name = parts
            .next()
            .ok_or_else(|| Error::parse(ln + 1, "empty header line"))?
            .to_string();
        let mut shape = Vec::new();
        for p in parts {
            let d: usize = p
                .parse()
                .map_err(|_| Error::parse(ln + 1, alloc::format!("bad dimension '{p}'")))?;
            if d == 0 {
                return Err(Error::parse(ln + 1, "zero dimension"));
            }
            shape.push(d);
        }
        if shape.is_empty() {
            return Err(Error::parse(ln + 1, alloc::format!("entry {name} has no shape")));
        }
        let n: usize = shape.iter().product();
        let (vln, vline) = lines
            .next()
            .ok_or_else(|| Error::parse(ln + 2, alloc::format!("missing values for {name}")))?;
        let mut values = Vec::with_capacity(n);
        for tok in vline.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::parse(vln + 1, alloc::format!("bad value '{tok}'")))?;
            values.push(v);
        }
        if values.len() != n {
            return Err(Error::parse(
                vln + 1,
                alloc::format!("entry {name}: expected {n} values, got {}", values.len()),
            ));
        }
        if map.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::parse(ln + 1, alloc::format!("duplicate entry {name}")));
        }
    }
    Ok(map)
}

/// Copy decoded values into an existing parameter set; every entry of the set
/// must be present under `prefix` with a matching length.
pub fn apply(map: &EntryMap, prefix: &str, params: &mut ParameterSet) -> Result<()> {
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let full = if prefix.is_empty() {
            name.clone()
        } else {
            alloc::format!("{prefix}.{name}")
        };
        let (_, values) = map
            .get(&full)
            .ok_or_else(|| Error::argument(alloc::format!("checkpoint missing entry {full}")))?;
        let entry = params.get_mut(&name).unwrap();
        if values.len() != entry.values.len() {
            return Err(Error::dimension(alloc::format!(
                "checkpoint entry {full}: length {} vs {}",
                values.len(),
                entry.values.len()
            )));
        }
        entry.values.copy_from_slice(values);
    }
    Ok(())
}
