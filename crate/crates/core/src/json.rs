//! Float formatting for model JSON: every float is written as a decimal with
//! 17 significant digits, which round-trips `f64` exactly.

use serde::ser::{SerializeSeq, Serializer};
use serde_json::value::RawValue;

pub(crate) fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn raw(v: f64) -> Box<RawValue> {
    // `{:e}` output of a finite float is always a valid JSON number.
    RawValue::from_string(fmt17(v)).expect("finite float formats as JSON number")
}

pub(crate) fn vec17<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|&x| raw(x)))
}

pub(crate) fn mat17<S: Serializer>(m: &[Vec<f64>], s: S) -> Result<S::Ok, S::Error> {
    struct Row<'a>(&'a [f64]);
    impl serde::Serialize for Row<'_> {
        fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
            vec17(self.0, s)
        }
    }
    let mut seq = s.serialize_seq(Some(m.len()))?;
    for row in m {
        seq.serialize_element(&Row(row))?;
    }
    seq.end()
}

pub(crate) fn f17<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    serde::Serialize::serialize(&raw(*v), s)
}
