use std::fmt::Write as _;

use super::{
    BlackBoxHamiltonianModel, BlackBoxLagrangianModel, EnergyModel, FeatureKind, FeatureTransform,
    MassMatrixHead, ModelVariant, StructuredHamiltonianModel, StructuredLagrangianModel,
};
use crate::diffnet::{read_net_block, write_net, Net};
use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_list, LineReader};

pub const MODEL_HEADER: &str = "physnet-model v1";

fn write_features(out: &mut String, ft: &FeatureTransform) {
    let kinds: Vec<&str> = ft.kinds().iter().map(|k| k.name()).collect();
    let _ = writeln!(out, "features {}", kinds.join(" "));
}

fn write_head(out: &mut String, name: &str, head: &MassMatrixHead) {
    let _ = writeln!(out, "epsilon {}", fmt_f64(head.epsilon));
    let _ = writeln!(out, "alpha {}", fmt_f64(head.alpha));
    write_net(out, name, &head.net.spec, &head.net.params);
}

/// Text serialization; floats are written in shortest round-trip form so
/// reading back is bit-exact.
pub fn model_to_string(model: &EnergyModel) -> String {
    let mut out = format!("{MODEL_HEADER}\nvariant {}\n", model.variant());
    write_features(&mut out, model.features());
    match model {
        EnergyModel::StructuredLagrangian(m) => {
            write_head(&mut out, "mass", &m.mass);
            write_net(&mut out, "potential", &m.potential.spec, &m.potential.params);
        }
        EnergyModel::StructuredHamiltonian(m) => {
            write_head(&mut out, "inverse_mass", &m.inv_mass);
            write_net(&mut out, "potential", &m.potential.spec, &m.potential.params);
        }
        EnergyModel::BlackBoxLagrangian(m) => {
            let _ = writeln!(out, "hessian_damping {}", fmt_f64(m.hessian_damping));
            let _ = writeln!(out, "condition_bound {}", fmt_f64(m.condition_bound));
            write_net(&mut out, "lagrangian", &m.net.spec, &m.net.params);
        }
        EnergyModel::BlackBoxHamiltonian(m) => {
            write_net(&mut out, "hamiltonian", &m.net.spec, &m.net.params);
        }
    }
    out
}

fn read_net(reader: &mut LineReader<'_>, name: &str) -> Result<Net> {
    let (spec, params) = read_net_block(reader, name)?;
    Net::new(spec, params)
}

fn read_head(reader: &mut LineReader<'_>, name: &str, n: usize) -> Result<MassMatrixHead> {
    let epsilon = reader.expect_f64("epsilon")?;
    let alpha = reader.expect_f64("alpha")?;
    MassMatrixHead::from_net(n, epsilon, alpha, read_net(reader, name)?)
}

pub fn model_from_str(text: &str) -> Result<EnergyModel> {
    let mut reader = LineReader::new(text);
    let (_, header) = reader.next_line()?;
    if header != MODEL_HEADER {
        return Err(Error::Format(format!("unsupported model file header '{header}'")));
    }
    let variant: ModelVariant = reader.expect_key("variant")?.parse()?;
    let kinds: Vec<FeatureKind> = parse_list(reader.expect_key("features")?)?;
    let features = FeatureTransform::new(kinds)?;
    let n = features.dof();
    Ok(match variant {
        ModelVariant::StructuredLagrangian => {
            let mass = read_head(&mut reader, "mass", n)?;
            let potential = read_net(&mut reader, "potential")?;
            EnergyModel::StructuredLagrangian(StructuredLagrangianModel::from_parts(features, mass, potential)?)
        }
        ModelVariant::StructuredHamiltonian => {
            let inv_mass = read_head(&mut reader, "inverse_mass", n)?;
            let potential = read_net(&mut reader, "potential")?;
            EnergyModel::StructuredHamiltonian(StructuredHamiltonianModel::from_parts(features, inv_mass, potential)?)
        }
        ModelVariant::BlackBoxLagrangian => {
            let damping = reader.expect_f64("hessian_damping")?;
            let bound = reader.expect_f64("condition_bound")?;
            let net = read_net(&mut reader, "lagrangian")?;
            EnergyModel::BlackBoxLagrangian(BlackBoxLagrangianModel::from_parts(features, net, damping, bound)?)
        }
        ModelVariant::BlackBoxHamiltonian => {
            let net = read_net(&mut reader, "hamiltonian")?;
            EnergyModel::BlackBoxHamiltonian(BlackBoxHamiltonianModel::from_parts(features, net)?)
        }
    })
}
