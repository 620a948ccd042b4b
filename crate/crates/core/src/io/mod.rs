//! On-disk formats.
//!
//! A frame sequence directory holds `frames/NNNNNN.pgm` and `timestamps.txt`
//! (one ns value per line, in frame order). A bundle directory is a frame
//! sequence plus `events.dvs`; a video directory is a frame sequence plus
//! `gt.csv`.

mod checkpoint;
mod events;
mod pgm;
mod text;

use std::fs;
use std::path::{Path, PathBuf};

pub use checkpoint::{decode_checkpoint, encode_ann, encode_snn, load_checkpoint, save_ann, save_snn, Checkpoint};
pub use events::{decode_events, encode_events, read_events, write_events, EventFile};
pub use pgm::{decode_pgm, encode_pgm, encode_pgm_values, read_pgm, write_pgm};
pub use text::{
    format_kernel, format_losses, format_trajectory, parse_kernel, parse_trajectory, read_kernel, read_timestamps,
    read_trajectory, write_kernel, write_losses, write_timestamps, write_trajectory,
};

use crate::error::{Error, Result};
use crate::event_sim::DavisBundle;
use crate::frame::Frame;
use crate::fusion::TrackEstimate;

pub const EVENTS_FILE: &str = "events.dvs";
pub const FRAMES_DIR: &str = "frames";
pub const TIMESTAMPS_FILE: &str = "timestamps.txt";
pub const GT_FILE: &str = "gt.csv";

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::file(path, e))
}

pub(crate) fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

/// Writes `bytes`, creating parent directories.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::file(path, e))
}

fn frame_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(FRAMES_DIR).join(format!("{i:06}.pgm"))
}

pub fn write_frames(dir: &Path, frames: &[Frame]) -> Result<()> {
    for (i, f) in frames.iter().enumerate() {
        write_pgm(&frame_path(dir, i), f)?;
    }
    let ts: Vec<u64> = frames.iter().map(|f| f.t_ns).collect();
    write_timestamps(&dir.join(TIMESTAMPS_FILE), &ts)
}

pub fn read_frames(dir: &Path) -> Result<Vec<Frame>> {
    let ts = read_timestamps(&dir.join(TIMESTAMPS_FILE))?;
    ts.iter()
        .enumerate()
        .map(|(i, &t)| read_pgm(&frame_path(dir, i), t))
        .collect()
}

pub fn write_bundle(dir: &Path, bundle: &DavisBundle) -> Result<()> {
    write_frames(dir, &bundle.aps)?;
    write_events(
        &dir.join(EVENTS_FILE),
        &EventFile {
            width: bundle.width,
            height: bundle.height,
            dt_e_ns: bundle.dt_e_ns,
            events: bundle.dvs.clone(),
        },
    )
}

pub fn read_bundle(dir: &Path) -> Result<DavisBundle> {
    let ev = read_events(&dir.join(EVENTS_FILE))?;
    let aps = read_frames(dir)?;
    for (i, f) in aps.iter().enumerate() {
        if f.dims() != (ev.width, ev.height) {
            return Err(Error::Format {
                path: frame_path(dir, i),
                msg: format!(
                    "frame is {}x{}, events are {}x{}",
                    f.width(),
                    f.height(),
                    ev.width,
                    ev.height
                ),
            });
        }
    }
    Ok(DavisBundle {
        width: ev.width,
        height: ev.height,
        dt_e_ns: ev.dt_e_ns,
        aps,
        dvs: ev.events,
    })
}

pub fn write_video(dir: &Path, frames: &[Frame], gt: &[TrackEstimate]) -> Result<()> {
    write_frames(dir, frames)?;
    write_trajectory(&dir.join(GT_FILE), gt)
}

/// Frames and, when present, the ground truth of a video directory.
pub fn read_video(dir: &Path) -> Result<(Vec<Frame>, Option<Vec<TrackEstimate>>)> {
    let frames = read_frames(dir)?;
    let gt_path = dir.join(GT_FILE);
    let gt = if gt_path.exists() {
        Some(read_trajectory(&gt_path)?)
    } else {
        None
    };
    Ok((frames, gt))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event_sim::{simulate, SimConfig};
    use crate::synth::SynthSpec;

    #[test]
    fn bundle_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let video = SynthSpec {
            frames: 17,
            ..SynthSpec::default()
        }
        .render()
        .unwrap();
        let sim = SimConfig::default();
        let frames: Vec<Frame> = video
            .frames
            .iter()
            .enumerate()
            .map(|(i, f)| Frame::new(32, 32, f.data().to_vec(), i as u64 * sim.sub_interval_ns()).unwrap())
            .collect();
        let b = simulate(&frames, &sim).unwrap();
        write_bundle(dir.path(), &b).unwrap();
        let back = read_bundle(dir.path()).unwrap();
        assert_eq!(back.dvs, b.dvs);
        assert_eq!(back.aps.len(), b.aps.len());
        let d2 = tempfile::tempdir().unwrap();
        write_bundle(d2.path(), &back).unwrap();
        let again = read_bundle(d2.path()).unwrap();
        assert_eq!(again, back);
        for name in [EVENTS_FILE, TIMESTAMPS_FILE, "frames/000001.pgm"] {
            assert_eq!(
                fs::read(dir.path().join(name)).unwrap(),
                fs::read(d2.path().join(name)).unwrap()
            );
        }
    }

    #[test]
    fn missing_frame_names_the_file() {
        let dir = tempfile::tempdir().unwrap();
        write_timestamps(&dir.path().join(TIMESTAMPS_FILE), &[0, 5]).unwrap();
        let err = read_frames(dir.path()).unwrap_err().to_string();
        assert!(err.contains("000000.pgm"), "{err}");
    }
}
