//! WFDB-style header parsing (PhysioNet challenge convention) and the
//! matching 16-bit signal payload reader.
//!
//! A header looks like:
//!
//! ```text
//! A0001 12 500 7500
//! A0001.dat 16 1000/mV 16 0 28 -1716 0 I
//! ... one line per lead ...
//! # Age: 74
//! # Sex: Male
//! # Dx: 426783006,164889003
//! ```
//!
//! Line one: record id, lead count, sampling rate (Hz), samples per lead.
//! Each lead line: payload file, storage format, gain with optional
//! `(baseline)` and `/units` suffixes, ADC resolution, ADC zero, first
//! value, checksum, block size, lead name. Physical millivolts are
//! `(raw - baseline) / gain`; when no baseline is given the ADC zero
//! stands in. Diagnosis codes ride on the `# Dx:` comment line.

use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use super::{parse_err, DataError, DataResult, EcgRecord};
use crate::preprocess::RawSignal;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LeadSpec {
    pub file: String,
    pub format: String,
    pub gain: f64,
    pub baseline: f64,
    pub units: String,
    pub adc_res: u32,
    pub adc_zero: i64,
    pub first_value: i64,
    pub checksum: i64,
    pub block_size: u32,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeaderInfo {
    pub record_id: String,
    pub n_leads: usize,
    pub fs: u32,
    pub n_samples: usize,
    pub leads: Vec<LeadSpec>,
    pub dx_codes: BTreeSet<String>,
    pub age: String,
    pub sex: String,
}

/// Parse header text. `origin` names the source in error messages.
pub fn parse_header(text: &str, origin: &str) -> DataResult<HeaderInfo> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| parse_err(origin, 1, "empty header"))?;
    let fields: Vec<&str> = first.split_whitespace().collect();
    if fields.len() < 4 {
        return Err(parse_err(
            origin,
            1,
            "record line needs: id n_leads fs n_samples",
        ));
    }
    let record_id = fields[0].to_string();
    let n_leads: usize = fields[1]
        .parse()
        .map_err(|_| parse_err(origin, 1, format!("bad lead count {:?}", fields[1])))?;
    let fs: u32 = fields[2]
        .parse()
        .map_err(|_| parse_err(origin, 1, format!("bad sampling frequency {:?}", fields[2])))?;
    let n_samples: usize = fields[3]
        .parse()
        .map_err(|_| parse_err(origin, 1, format!("bad sample count {:?}", fields[3])))?;

    let mut leads = Vec::with_capacity(n_leads);
    let mut dx_codes: Option<BTreeSet<String>> = None;
    let mut age = String::new();
    let mut sex = String::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(v) = comment.strip_prefix("Dx:") {
                dx_codes = Some(
                    v.split(',')
                        .map(|c| c.trim().to_string())
                        .filter(|c| !c.is_empty())
                        .collect(),
                );
            } else if let Some(v) = comment.strip_prefix("Age:") {
                age = v.trim().to_string();
            } else if let Some(v) = comment.strip_prefix("Sex:") {
                sex = v.trim().to_string();
            }
            continue;
        }
        leads.push(parse_lead_line(line, origin, lineno)?);
    }

    if leads.len() != n_leads {
        return Err(parse_err(
            origin,
            1,
            format!("header declares {n_leads} leads but lists {}", leads.len()),
        ));
    }
    let dx_codes =
        dx_codes.ok_or_else(|| parse_err(origin, 1, "missing \"# Dx:\" comment line"))?;
    Ok(HeaderInfo {
        record_id,
        n_leads,
        fs,
        n_samples,
        leads,
        dx_codes,
        age,
        sex,
    })
}

fn parse_lead_line(line: &str, origin: &str, lineno: usize) -> DataResult<LeadSpec> {
    let f: Vec<&str> = line.split_whitespace().collect();
    if f.len() < 9 {
        return Err(parse_err(
            origin,
            lineno,
            "lead line needs 9 fields: file format gain adc_res adc_zero first checksum block name",
        ));
    }
    let err = |what: &str, tok: &str| parse_err(origin, lineno, format!("bad {what} {tok:?}"));

    // Gain token: "1000", "1000/mV", "1000(12)/mV".
    let gain_tok = f[2];
    let (gain_part, units) = match gain_tok.split_once('/') {
        Some((g, u)) => (g, u.to_string()),
        None => (gain_tok, String::new()),
    };
    let (gain_str, baseline_str) = match gain_part.split_once('(') {
        Some((g, rest)) => {
            let b = rest
                .strip_suffix(')')
                .ok_or_else(|| err("gain token", gain_tok))?;
            (g, Some(b))
        }
        None => (gain_part, None),
    };
    let gain: f64 = gain_str.parse().map_err(|_| err("gain", gain_tok))?;
    let adc_zero: i64 = f[4].parse().map_err(|_| err("ADC zero", f[4]))?;
    let baseline: f64 = match baseline_str {
        Some(b) => b.parse().map_err(|_| err("baseline", gain_tok))?,
        None => adc_zero as f64,
    };
    Ok(LeadSpec {
        file: f[0].to_string(),
        format: f[1].to_string(),
        gain,
        baseline,
        units,
        adc_res: f[3].parse().map_err(|_| err("ADC resolution", f[3]))?,
        adc_zero,
        first_value: f[5].parse().map_err(|_| err("first value", f[5]))?,
        checksum: f[6].parse().map_err(|_| err("checksum", f[6]))?,
        block_size: f[7].parse().map_err(|_| err("block size", f[7]))?,
        name: f[8..].join(" "),
    })
}

/// Render a header in the format [`parse_header`] accepts. Parse →
/// serialize → parse is lossless for every parsed field.
pub fn serialize_header(h: &HeaderInfo) -> String {
    let mut out = format!("{} {} {} {}\n", h.record_id, h.n_leads, h.fs, h.n_samples);
    for lead in &h.leads {
        let gain_tok = if lead.baseline == lead.adc_zero as f64 {
            format!("{}/{}", lead.gain, lead.units)
        } else {
            format!("{}({})/{}", lead.gain, lead.baseline, lead.units)
        };
        out.push_str(&format!(
            "{} {} {} {} {} {} {} {} {}\n",
            lead.file,
            lead.format,
            gain_tok,
            lead.adc_res,
            lead.adc_zero,
            lead.first_value,
            lead.checksum,
            lead.block_size,
            lead.name
        ));
    }
    if !h.age.is_empty() {
        out.push_str(&format!("# Age: {}\n", h.age));
    }
    if !h.sex.is_empty() {
        out.push_str(&format!("# Sex: {}\n", h.sex));
    }
    let codes: Vec<&str> = h.dx_codes.iter().map(|s| s.as_str()).collect();
    out.push_str(&format!("# Dx: {}\n", codes.join(",")));
    out
}

/// Read a record from a WFDB-style `.hea` file plus its 16-bit payload:
/// little-endian i16, samples interleaved across leads frame by frame
/// (storage format "16", optionally with a `+offset` byte skip). Raw ADC
/// units convert to physical ones as `(value - baseline) / gain`.
pub fn read_wfdb(hea_path: &Path) -> DataResult<EcgRecord> {
    let origin = hea_path.display().to_string();
    let text = std::fs::read_to_string(hea_path)?;
    let info = parse_header(&text, &origin)?;
    let dir = hea_path.parent().unwrap_or_else(|| Path::new("."));

    // The challenge corpora keep all leads in one file; insist on that.
    let payload_name = &info.leads[0].file;
    if info.leads.iter().any(|l| &l.file != payload_name) {
        return Err(parse_err(&origin, 2, "multi-file payloads not supported"));
    }
    let (base_format, skip) = match payload_name_format(&info.leads[0].format) {
        Some(pair) => pair,
        None => {
            return Err(parse_err(
                &origin,
                2,
                format!("unsupported storage format {:?}", info.leads[0].format),
            ))
        }
    };
    if base_format != "16" {
        return Err(parse_err(
            &origin,
            2,
            format!("unsupported storage format {base_format:?} (only 16)"),
        ));
    }

    let mut payload = Vec::new();
    std::fs::File::open(dir.join(payload_name))?.read_to_end(&mut payload)?;
    let payload = payload.get(skip..).ok_or_else(|| {
        parse_err(&origin, 2, "payload shorter than its declared byte offset")
    })?;
    let need = info.n_leads * info.n_samples * 2;
    if payload.len() < need {
        return Err(parse_err(
            &origin,
            2,
            format!("payload holds {} bytes, need {need}", payload.len()),
        ));
    }

    let mut data = vec![0.0f64; info.n_leads * info.n_samples];
    for t in 0..info.n_samples {
        for (lead, spec) in info.leads.iter().enumerate() {
            let at = (t * info.n_leads + lead) * 2;
            let raw = i16::from_le_bytes([payload[at], payload[at + 1]]) as f64;
            data[lead * info.n_samples + t] = (raw - spec.baseline) / spec.gain;
        }
    }
    Ok(EcgRecord {
        id: info.record_id,
        signal: RawSignal {
            samples: Tensor::from_vec(data, &[info.n_leads, info.n_samples])
                .map_err(DataError::Tensor)?,
            fs: info.fs,
        },
        dx_codes: info.dx_codes,
        age: info.age,
        sex: info.sex,
    })
}

/// Split a storage-format token like "16" or "16+24" into the format and
/// the leading byte offset.
fn payload_name_format(token: &str) -> Option<(&str, usize)> {
    match token.split_once('+') {
        Some((fmt, off)) => off.parse().ok().map(|o| (fmt, o)),
        None => Some((token, 0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "\
A0001 2 500 20
A0001.dat 16 1000/mV 16 0 28 -1716 0 I
A0001.dat 16 1000(5)/mV 16 0 7 2029 0 II
# Age: 74
# Sex: Male
# Dx: 426783006
";

    #[test]
    fn parses_the_documented_shape() {
        let h = parse_header(SAMPLE, "test").unwrap();
        assert_eq!(h.record_id, "A0001");
        assert_eq!(h.n_leads, 2);
        assert_eq!(h.fs, 500);
        assert_eq!(h.n_samples, 20);
        assert_eq!(h.dx_codes.len(), 1);
        assert!(h.dx_codes.contains("426783006"));
        assert_eq!(h.age, "74");
        assert_eq!(h.sex, "Male");
        assert_eq!(h.leads[0].gain, 1000.0);
        assert_eq!(h.leads[0].baseline, 0.0);
        assert_eq!(h.leads[0].units, "mV");
        assert_eq!(h.leads[0].name, "I");
        // Explicit baseline overrides ADC zero.
        assert_eq!(h.leads[1].baseline, 5.0);
    }

    #[test]
    fn multiple_dx_codes_split_on_commas() {
        let text = SAMPLE.replace("# Dx: 426783006", "# Dx: 164889003, 59118001");
        let h = parse_header(&text, "test").unwrap();
        assert_eq!(h.dx_codes.len(), 2);
        assert!(h.dx_codes.contains("164889003"));
        assert!(h.dx_codes.contains("59118001"));
    }

    #[test]
    fn malformed_frequency_names_the_line() {
        let text = SAMPLE.replace("A0001 2 500 20", "A0001 2 fast 20");
        match parse_header(&text, "myfile.hea") {
            Err(DataError::Parse { file, line, msg }) => {
                assert_eq!(file, "myfile.hea");
                assert_eq!(line, 1);
                assert!(msg.contains("fast"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn missing_dx_is_an_error() {
        let text = SAMPLE.replace("# Dx: 426783006\n", "");
        assert!(parse_header(&text, "test").is_err());
    }

    #[test]
    fn lead_count_mismatch_is_an_error() {
        let text = SAMPLE.replace("A0001 2 500 20", "A0001 3 500 20");
        assert!(parse_header(&text, "test").is_err());
    }

    #[test]
    fn serialize_parse_roundtrip() {
        let h = parse_header(SAMPLE, "test").unwrap();
        let text = serialize_header(&h);
        let back = parse_header(&text, "test").unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn reads_16bit_interleaved_payload() {
        let dir = std::env::temp_dir().join("ecgm-wfdb-tests");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("A0001.hea"), SAMPLE).unwrap();
        // 20 frames of 2 leads: lead I counts 0..20, lead II is constant
        // 105 (baseline 5, gain 1000 -> 0.1 mV).
        let mut payload = Vec::new();
        for t in 0..20i16 {
            payload.extend_from_slice(&t.to_le_bytes());
            payload.extend_from_slice(&105i16.to_le_bytes());
        }
        std::fs::write(dir.join("A0001.dat"), &payload).unwrap();
        let rec = read_wfdb(&dir.join("A0001.hea")).unwrap();
        assert_eq!(rec.signal.samples.shape(), &[2, 20]);
        assert_eq!(rec.signal.fs, 500);
        let d = rec.signal.samples.data();
        assert_eq!(d[3], 3.0 / 1000.0); // lead I, t=3
        for t in 0..20 {
            assert!((d[20 + t] - 0.1).abs() < 1e-12); // lead II constant
        }
    }

    #[test]
    fn payload_offset_format_is_honored() {
        let dir = std::env::temp_dir().join("ecgm-wfdb-offset");
        std::fs::create_dir_all(&dir).unwrap();
        let hea = SAMPLE.replace(" 16 1000", " 16+8 1000");
        std::fs::write(dir.join("A0001.hea"), &hea).unwrap();
        let mut payload = vec![0xEEu8; 8]; // junk prefix
        for t in 0..20i16 {
            payload.extend_from_slice(&(t * 2).to_le_bytes());
            payload.extend_from_slice(&0i16.to_le_bytes());
        }
        std::fs::write(dir.join("A0001.dat"), &payload).unwrap();
        let rec = read_wfdb(&dir.join("A0001.hea")).unwrap();
        assert_eq!(rec.signal.samples.data()[5], 10.0 / 1000.0);
    }

    #[test]
    fn truncated_payload_is_an_error() {
        let dir = std::env::temp_dir().join("ecgm-wfdb-trunc");
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("A0001.hea"), SAMPLE).unwrap();
        std::fs::write(dir.join("A0001.dat"), [0u8; 10]).unwrap();
        assert!(read_wfdb(&dir.join("A0001.hea")).is_err());
    }
}
