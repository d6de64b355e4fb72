use std::fmt::Write as _;

use super::{Activation, NetSpec, ParamVector};
use crate::error::{Error, Result};
use crate::textio::{fmt_f64, parse_list, LineReader};

/// Appends a `net` block: spec fields, then one parameter per line.
pub fn write_net(out: &mut String, name: &str, spec: &NetSpec, params: &ParamVector) {
    let widths: Vec<String> = spec.layer_widths.iter().map(|w| w.to_string()).collect();
    let acts: Vec<&str> = spec.activations.iter().map(|a| a.name()).collect();
    let _ = writeln!(out, "net {name}");
    let _ = writeln!(out, "input_dim {}", spec.input_dim);
    let _ = writeln!(out, "layer_widths {}", widths.join(" "));
    let _ = writeln!(out, "activations {}", acts.join(" "));
    let _ = writeln!(out, "output_dim {}", spec.output_dim);
    let _ = writeln!(out, "params {}", params.len());
    for v in params.iter() {
        out.push_str(&fmt_f64(*v));
        out.push('\n');
    }
    out.push_str("end\n");
}

/// Reads a block produced by [`write_net`]; the block name must match.
pub(crate) fn read_net_block(reader: &mut LineReader<'_>, name: &str) -> Result<(NetSpec, ParamVector)> {
    let found = reader.expect_key("net")?;
    if found != name {
        return Err(Error::Format(format!("expected net '{name}', found '{found}'")));
    }
    let input_dim: usize = reader.expect_parsed("input_dim")?;
    let widths: Vec<usize> = parse_list(reader.expect_key("layer_widths")?)?;
    let acts: Vec<Activation> = parse_list(reader.expect_key("activations")?)?;
    let output_dim: usize = reader.expect_parsed("output_dim")?;
    let spec = NetSpec::new(input_dim, widths, output_dim, acts)?;
    let count: usize = reader.expect_parsed("params")?;
    if count != spec.param_count() {
        return Err(Error::Format(format!(
            "net '{name}' declares {count} params, layout needs {}",
            spec.param_count()
        )));
    }
    let values = reader.read_values(count)?;
    reader.expect_key("end")?;
    Ok((spec, ParamVector(values)))
}

/// Parses a standalone network file (`physnet-net v1` header).
pub fn read_net(text: &str) -> Result<(String, NetSpec, ParamVector)> {
    let mut reader = LineReader::new(text);
    let (_, header) = reader.next_line()?;
    if header != NET_HEADER {
        return Err(Error::Format(format!("unsupported network file header '{header}'")));
    }
    let name = reader.expect_key("name")?.to_string();
    let (spec, params) = read_net_block(&mut reader, &name)?;
    Ok((name, spec, params))
}

pub(crate) const NET_HEADER: &str = "physnet-net v1";

/// Serializes a standalone network file.
pub fn net_to_string(name: &str, spec: &NetSpec, params: &ParamVector) -> String {
    let mut out = format!("{NET_HEADER}\nname {name}\n");
    write_net(&mut out, name, spec, params);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = NetSpec::new(3, vec![7, 5], 2, vec![Activation::Softplus, Activation::Tanh]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut params = ParamVector::init(&spec, &mut rng);
        params[0] = 1e-310;
        params[1] = -0.0;
        params[2] = 1.0 / 3.0;
        let text = net_to_string("potential", &spec, &params);
        let (name, spec2, params2) = read_net(&text).unwrap();
        assert_eq!(name, "potential");
        assert_eq!(spec, spec2);
        let bits = |p: &ParamVector| p.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&params), bits(&params2));
    }

    #[test]
    fn rejects_unknown_header() {
        assert!(read_net("physnet-net v9\nname x\n").is_err());
    }
}
