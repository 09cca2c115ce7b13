//! Parameter checkpoints tied to a model layout.

use std::path::Path;

use cldssm::nets::{
    read_checkpoint, write_checkpoint, CheckpointHeader, ParamKind, ParamRegistry, RecognitionNet, TransitionNet,
};
use cldssm::{Error, Result};

pub fn save_theta(path: &Path, net: &TransitionNet, d_x: usize, theta: &ParamRegistry) -> Result<()> {
    let header = CheckpointHeader {
        kind: ParamKind::Transition,
        widths: net.widths(),
        d_z: net.d_z,
        d_u: net.d_u,
        d_x,
    };
    write_checkpoint(path, &header, &theta.flatten())
}

pub fn save_phi(path: &Path, rec: &RecognitionNet, d_u: usize, phi: &ParamRegistry) -> Result<()> {
    let header = CheckpointHeader {
        kind: ParamKind::Recognition,
        widths: rec.widths(),
        d_z: rec.d_z,
        d_u,
        d_x: rec.d_x,
    };
    write_checkpoint(path, &header, &phi.flatten())
}

fn incompatible(msg: impl Into<String>) -> Error {
    Error::IncompatibleCheckpoint(msg.into())
}

/// Transition network, θ and the observation dimension stored with it.
pub fn load_theta(path: &Path) -> Result<(TransitionNet, ParamRegistry, usize)> {
    let (h, values) = read_checkpoint(path)?;
    if h.kind != ParamKind::Transition {
        return Err(incompatible("expected a transition checkpoint"));
    }
    if h.widths.len() < 2 || h.widths[0] != h.d_z + h.d_u || h.widths[h.widths.len() - 1] != h.d_z {
        return Err(incompatible(format!(
            "layer widths {:?} do not match d_z = {}, d_u = {}",
            h.widths, h.d_z, h.d_u
        )));
    }
    let net = TransitionNet::new(h.d_z, h.d_u, h.widths[1..h.widths.len() - 1].to_vec());
    let mut theta = net.zero_params();
    if values.len() != theta.len() {
        return Err(incompatible(format!(
            "{} parameters, layout needs {}",
            values.len(),
            theta.len()
        )));
    }
    theta.assign(&values)?;
    Ok((net, theta, h.d_x))
}

pub fn load_phi(path: &Path) -> Result<(RecognitionNet, ParamRegistry)> {
    let (h, values) = read_checkpoint(path)?;
    if h.kind != ParamKind::Recognition || h.widths.len() != 3 {
        return Err(incompatible("expected a recognition checkpoint"));
    }
    let rec = RecognitionNet::new(h.widths[0], h.widths[1], h.widths[2]);
    let mut phi = rec.zero_params();
    if values.len() != phi.len() {
        return Err(incompatible(format!(
            "{} parameters, layout needs {}",
            values.len(),
            phi.len()
        )));
    }
    phi.assign(&values)?;
    Ok((rec, phi))
}
