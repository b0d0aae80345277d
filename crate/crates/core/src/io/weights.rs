//! Text weight files: a sequence of records `name ndim extents… values…`,
//! whitespace separated.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightSet {
    pub tensors: BTreeMap<String, Tensor>,
}

impl WeightSet {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (name, t) in &self.tensors {
            s.push_str(name);
            s.push_str(&format!(" {}", t.ndim()));
            for e in t.shape() {
                s.push_str(&format!(" {e}"));
            }
            for v in t.data() {
                s.push_str(&format!(" {v:e}"));
            }
            s.push('\n');
        }
        s
    }
}

/// Cap on the number of values in one record, so a corrupt extent cannot
/// request unbounded memory.
pub const MAX_TENSOR_LEN: usize = 1 << 24;

pub fn parse_weights(text: &str) -> Result<WeightSet> {
    let mut toks = text.split_whitespace();
    let mut set = WeightSet::default();
    let err = |m: String| Error::Parse(format!("weights: {m}"));
    while let Some(name) = toks.next() {
        let mut int = |what: &str| -> Result<usize> {
            let t = toks
                .next()
                .ok_or_else(|| err(format!("{name}: missing {what}")))?;
            t.parse()
                .map_err(|_| err(format!("{name}: bad {what} {t:?}")))
        };
        let ndim = int("rank")?;
        if ndim > 8 {
            return Err(err(format!("{name}: rank {ndim} too large")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(int("extent")?);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &e| a.checked_mul(e))
            .filter(|&n| n <= MAX_TENSOR_LEN)
            .ok_or_else(|| err(format!("{name}: tensor too large")))?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let t = toks
                .next()
                .ok_or_else(|| err(format!("{name}: too few values")))?;
            let v: f64 = t
                .parse()
                .map_err(|_| err(format!("{name}: bad value {t:?}")))?;
            if !v.is_finite() {
                return Err(err(format!("{name}: non-finite value")));
            }
            data.push(v);
        }
        if set.tensors.contains_key(name) {
            return Err(err(format!("duplicate tensor {name}")));
        }
        set.tensors
            .insert(name.to_string(), Tensor::new(shape, data)?);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let w = parse_weights("a 2 2 3 1 2 3 4 5 6\nb 1 1 -0.5\nc 0 7").unwrap();
        assert_eq!(w.get("a").unwrap().shape(), &[2, 3]);
        assert_eq!(w.get("b").unwrap().data(), &[-0.5]);
        assert_eq!(w.get("c").unwrap().data(), &[7.0]);
        assert_eq!(parse_weights(&w.to_text()).unwrap(), w);
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "a",
            "a 1",
            "a 1 2 1",
            "a 1 1 x",
            "a 1 1 1 a 1 1 2",
            "a 1 1 nan",
            "a 9 1 1 1 1 1 1 1 1 1 0",
        ] {
            assert!(parse_weights(bad).is_err(), "{bad}");
        }
        assert!(parse_weights("a 2 99999999999 99999999999").is_err());
    }
}
