//! Binary framing for requests and results. All integers are little endian.
//!
//! ```text
//! request  = "JQQ1" str(dataset) str(query)
//! result   = "JQR1" u64(events) u32(ncols) column*
//! column   = str(name) u8(kind: 0 float, 1 int, 2 bool) u8(depth)
//!            (u64(len) u64*len){depth} u64(nvalues) values
//! values   = f64*n | i64*n | ceil(n/8) bytes of LSB-first packed bits
//! error    = "JQE1" str(category) str(message)
//! str      = u32(len) utf8
//! ```

use crate::error::ErrorCategory;
use crate::jagged::{ElementKind, JaggedArray, Values};

use super::QueryError;

const REQUEST: &[u8; 4] = b"JQQ1";
const RESULT: &[u8; 4] = b"JQR1";
const ERROR: &[u8; 4] = b"JQE1";

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: JaggedArray,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultSet {
    pub n_events: u64,
    pub columns: Vec<Column>,
}

/// A decoded response: a result set or a remote failure.
pub type Response = Result<ResultSet, (ErrorCategory, String)>;

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_u64(out: &mut Vec<u8>, x: u64) {
    out.extend_from_slice(&x.to_le_bytes());
}

pub fn encode_request(dataset: &str, query: &str) -> Vec<u8> {
    let mut out = REQUEST.to_vec();
    put_str(&mut out, dataset);
    put_str(&mut out, query);
    out
}

pub fn decode_request(bytes: &[u8]) -> Result<(String, String), QueryError> {
    let mut r = Reader { bytes, pos: 0 };
    r.magic(REQUEST)?;
    let ds = r.string()?;
    let q = r.string()?;
    r.finish()?;
    Ok((ds, q))
}

pub fn encode_result(rs: &ResultSet) -> Vec<u8> {
    let mut out = RESULT.to_vec();
    put_u64(&mut out, rs.n_events);
    out.extend_from_slice(&(rs.columns.len() as u32).to_le_bytes());
    for c in &rs.columns {
        put_str(&mut out, &c.name);
        let tag = match c.data.kind() {
            ElementKind::Float => 0u8,
            ElementKind::Int => 1,
            ElementKind::Bool => 2,
        };
        out.push(tag);
        out.push(c.data.depth() as u8);
        for level in c.data.offsets() {
            put_u64(&mut out, level.len() as u64);
            for &o in level {
                put_u64(&mut out, o as u64);
            }
        }
        put_u64(&mut out, c.data.values().len() as u64);
        match c.data.values() {
            Values::Float(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Values::Int(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Values::Bool(v) => {
                let mut bytes = vec![0u8; v.len().div_ceil(8)];
                for (i, &b) in v.iter().enumerate() {
                    if b {
                        bytes[i / 8] |= 1 << (i % 8);
                    }
                }
                out.extend_from_slice(&bytes);
            }
        }
    }
    out
}

pub fn encode_error(category: ErrorCategory, message: &str) -> Vec<u8> {
    let mut out = ERROR.to_vec();
    put_str(&mut out, category.name());
    put_str(&mut out, message);
    out
}

pub fn decode_response(bytes: &[u8]) -> Result<Response, QueryError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.starts_with(ERROR) {
        r.magic(ERROR)?;
        let cat = r.string()?;
        let msg = r.string()?;
        r.finish()?;
        let cat = ErrorCategory::from_name(&cat).ok_or_else(|| QueryError::Wire(format!("unknown category {cat}")))?;
        return Ok(Err((cat, msg)));
    }
    r.magic(RESULT)?;
    let n_events = r.u64()?;
    let ncols = r.u32()?;
    let mut columns = Vec::new();
    for _ in 0..ncols {
        let name = r.string()?;
        let kind = match r.u8()? {
            0 => ElementKind::Float,
            1 => ElementKind::Int,
            2 => ElementKind::Bool,
            t => return Err(QueryError::Wire(format!("unknown kind tag {t}"))),
        };
        let depth = r.u8()?;
        let mut offsets = Vec::with_capacity(depth as usize);
        for _ in 0..depth {
            let n = r.len()?;
            offsets.push((0..n).map(|_| r.u64().map(|x| x as usize)).collect::<Result<Vec<_>, _>>()?);
        }
        let n = r.len()?;
        let values = match kind {
            ElementKind::Float => Values::Float((0..n).map(|_| r.u64().map(f64::from_bits)).collect::<Result<_, _>>()?),
            ElementKind::Int => Values::Int((0..n).map(|_| r.u64().map(|x| x as i64)).collect::<Result<_, _>>()?),
            ElementKind::Bool => {
                let packed = r.take(n.div_ceil(8))?;
                Values::Bool((0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect())
            }
        };
        let data = JaggedArray::new(offsets, values).map_err(|e| QueryError::Wire(e.to_string()))?;
        columns.push(Column { name, data });
    }
    r.finish()?;
    Ok(Ok(ResultSet { n_events, columns }))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], QueryError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| QueryError::Wire(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, m: &[u8; 4]) -> Result<(), QueryError> {
        if self.take(4)? != m {
            return Err(QueryError::Wire("bad magic".into()));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8, QueryError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, QueryError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, QueryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// A length that must fit in the remaining input.
    fn len(&mut self) -> Result<usize, QueryError> {
        let n = self.u64()?;
        if n > self.bytes.len() as u64 * 8 {
            return Err(QueryError::Wire(format!("implausible length {n}")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String, QueryError> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| QueryError::Wire("invalid utf-8".into()))
    }

    fn finish(&self) -> Result<(), QueryError> {
        if self.pos != self.bytes.len() {
            return Err(QueryError::Wire(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_all_kinds() {
        let rs = ResultSet {
            n_events: 3,
            columns: vec![
                Column {
                    name: "value".into(),
                    data: JaggedArray::from_rows(&[vec![1.5, -0.0], vec![], vec![f64::NAN]]),
                },
                Column { name: "n".into(), data: JaggedArray::flat(Values::Int(vec![i64::MIN, 0, 7])) },
                Column {
                    name: "b".into(),
                    data: JaggedArray::new(
                        vec![vec![0, 1, 1, 2], vec![0, 9, 10]],
                        Values::Bool(vec![true, false, true, true, false, false, false, false, true, true]),
                    )
                    .unwrap(),
                },
            ],
        };
        let bytes = encode_result(&rs);
        let back = decode_response(&bytes).unwrap().unwrap();
        assert_eq!(back.n_events, 3);
        assert_eq!(back.columns[1], rs.columns[1]);
        assert_eq!(back.columns[2], rs.columns[2]);
        let v = back.columns[0].data.flatten_f64();
        assert_eq!(v[0], 1.5);
        assert!(v[1] == 0.0 && v[1].is_sign_negative());
        assert!(v[2].is_nan());
        assert_eq!(encode_result(&back), bytes);
    }

    #[test]
    fn errors_and_requests() {
        let e = encode_error(ErrorCategory::EmptySequence, "First on an empty list in row 4");
        assert_eq!(
            decode_response(&e).unwrap(),
            Err((ErrorCategory::EmptySequence, "First on an empty list in row 4".into()))
        );
        let req = encode_request("mc.zee", "From(\"mc.zee\") |> Get(\"Jets\") |> Count()");
        assert_eq!(decode_request(&req).unwrap().0, "mc.zee");
        assert!(decode_response(&req).is_err());
        let good = encode_result(&ResultSet { n_events: 0, columns: vec![] });
        assert!(decode_response(&good[..good.len() - 1]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode_response(&long).is_err());
    }
}
