//! Binary PGM (P5) and PPM (P6) images, 8 bits per sample.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PnmImage {
    pub width: usize,
    pub height: usize,
    /// 1 for PGM, 3 for PPM.
    pub channels: usize,
    pub comments: Vec<String>,
    /// Row-major, interleaved samples.
    pub data: Vec<u8>,
}

impl PnmImage {
    pub fn encode(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::Format(format!("PNM supports 1 or 3 channels, not {c}"))),
        };
        if self.data.len() != self.width * self.height * self.channels {
            return Err(Error::Format("PNM sample count does not match its size".into()));
        }
        let mut out = format!("{magic}\n");
        for c in &self.comments {
            out.push_str(&format!("# {}\n", c.replace('\n', " ")));
        }
        out.push_str(&format!("{} {}\n255\n", self.width, self.height));
        let mut bytes = out.into_bytes();
        bytes.extend_from_slice(&self.data);
        Ok(bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let mut comments = Vec::new();
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos >= bytes.len() {
                return Err(Error::Format("truncated PNM header".into()));
            }
            if bytes[pos] == b'#' {
                let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |e| pos + e);
                comments.push(String::from_utf8_lossy(&bytes[pos + 1..end]).trim().to_string());
                pos = end;
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
        }
        // Exactly one whitespace byte separates the header from the samples.
        pos += 1;
        let channels = match fields[0].as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Format(format!("unsupported PNM magic {m:?}"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PNM field {s:?}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Format(format!("only 8-bit PNM is supported, maxval {maxval}")));
        }
        let n = width * height * channels;
        let data = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::Format("truncated PNM samples".into()))?
            .to_vec();
        Ok(Self { width, height, channels, comments, data })
    }
}
