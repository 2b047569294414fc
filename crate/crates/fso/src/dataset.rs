//! Dataset generation and persistence: fixed-width little-endian binary
//! records behind a one-line JSON header.
//!
//! One record is theta_e(2) | theta_r(2) | theta_aoa(2) | h_a(n_lens) |
//! y_bar(4 n_lens), all f64. Record index i uses its own counter-mode RNG
//! stream, so generation is deterministic under any sharding, and even/odd
//! indices are pre-assigned to the train/test halves.

use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{sample_channel_state, synthesize_measurement, ChannelState};
use crate::config::SystemConfig;
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// JSON header stored on the first line of a dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub config: SystemConfig,
    pub sample_count: u64,
    pub seed: u64,
    pub created: String,
    pub config_digest: String,
}

/// One labeled sample: the true channel state and its noisy block
/// measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub state: ChannelState,
    pub y_bar: Array2<f64>,
}

fn record_len(n_lens: usize) -> usize {
    6 + n_lens + 4 * n_lens
}

/// Generates sample `index` of the stream identified by `seed`.
pub fn generate_sample(config: &SystemConfig, seed: u64, index: u64) -> SampleRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    let state = sample_channel_state(config, &mut rng);
    let block = synthesize_measurement(&state, config, &mut rng, false)
        .expect("state drawn from config is consistent");
    SampleRecord {
        state,
        y_bar: block.y_bar,
    }
}

/// Generates `n` samples in memory, sharded across workers by index.
pub fn generate_samples(config: &SystemConfig, n: u64, seed: u64) -> Vec<SampleRecord> {
    (0..n)
        .into_par_iter()
        .map(|i| generate_sample(config, seed, i))
        .collect()
}

/// Streams `n` deterministic records to `path` and returns the header.
pub fn generate_dataset(
    config: &SystemConfig,
    n: u64,
    seed: u64,
    path: &Path,
) -> Result<DatasetHeader> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Dataset("sample count must be positive".into()));
    }
    let header = DatasetHeader {
        format_version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        sample_count: n,
        seed,
        created: chrono::Utc::now().to_rfc3339(),
        config_digest: config.digest(),
    };
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, &header)?;
    writer.write_all(b"\n")?;

    // Workers generate shards in parallel; a single writer consumes them in
    // index order.
    const SHARD: u64 = 4096;
    let mut start = 0u64;
    while start < n {
        let end = (start + SHARD).min(n);
        let shard: Vec<SampleRecord> = (start..end)
            .into_par_iter()
            .map(|i| generate_sample(config, seed, i))
            .collect();
        for rec in &shard {
            write_record(&mut writer, rec)?;
        }
        start = end;
    }
    writer.flush()?;
    Ok(header)
}

fn write_record<W: Write>(w: &mut W, rec: &SampleRecord) -> Result<()> {
    for v in rec
        .state
        .theta_e
        .iter()
        .chain(rec.state.theta_r.iter())
        .chain(rec.state.theta_aoa.iter())
        .chain(rec.state.h_a.iter())
        .chain(rec.y_bar.iter())
    {
        w.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

/// Reads a dataset file back into memory.
pub fn read_dataset(path: &Path) -> Result<(DatasetHeader, Vec<SampleRecord>)> {
    let file = std::fs::File::open(path)?;
    let mut reader = BufReader::new(file);
    let mut header_line = String::new();
    reader.read_line(&mut header_line)?;
    let header: DatasetHeader = serde_json::from_str(header_line.trim_end())?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Dataset(format!(
            "unsupported dataset format version {}",
            header.format_version
        )));
    }
    if header.config_digest != header.config.digest() {
        return Err(Error::Dataset(
            "dataset header digest does not match embedded config".into(),
        ));
    }
    let n_lens = header.config.n_lens;
    let len = record_len(n_lens);
    let mut samples = Vec::with_capacity(header.sample_count as usize);
    let mut buf = vec![0u8; len * 8];
    for _ in 0..header.sample_count {
        reader.read_exact(&mut buf)?;
        let mut cur = std::io::Cursor::new(&buf);
        let mut vals = vec![0.0f64; len];
        for v in vals.iter_mut() {
            *v = cur.read_f64::<LittleEndian>()?;
        }
        let theta_e = [vals[0], vals[1]];
        let theta_r = [vals[2], vals[3]];
        let theta_aoa = [vals[4], vals[5]];
        let h_a = vals[6..6 + n_lens].to_vec();
        let y_bar = Array2::from_shape_vec((n_lens, 4), vals[6 + n_lens..].to_vec())
            .map_err(|e| Error::Dataset(e.to_string()))?;
        samples.push(SampleRecord {
            state: ChannelState {
                theta_e,
                theta_r,
                theta_aoa,
                h_a,
            },
            y_bar,
        });
    }
    Ok((header, samples))
}

/// Train/test split by record parity: even indices train, odd indices test.
pub fn split_train_test(samples: &[SampleRecord]) -> (Vec<&SampleRecord>, Vec<&SampleRecord>) {
    let train = samples.iter().step_by(2).collect();
    let test = samples.iter().skip(1).step_by(2).collect();
    (train, test)
}
