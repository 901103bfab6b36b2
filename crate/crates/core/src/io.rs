//! Surface, strategy, and path exports.
//!
//! CSV files use shortest round-trip float formatting (re-parsing the text
//! recovers the exact binary value). The binary surface layout is:
//!
//! ```text
//! magic   b"EQVS"            4 bytes
//! version u32                currently 1
//! scheme  u8                 0 = explicit, 1 = implicit
//! dim     u8                 number of spatial axes (1 or 2)
//! agents  u16                number of agents
//! steps   u64                time steps M
//! horizon f64
//! scheme_tolerance    f64
//! residual_tolerance  f64
//! per axis:  lo f64, hi f64, nodes u64
//! agent ids: u32 each
//! values:    (M+1) * nodes f64, layer-major
//! masks:     (M+1) * nodes u32, layer-major
//! ```
//!
//! All integers and floats are little-endian.

use std::io::{Read as IoRead, Write as IoWrite};

use crate::equilibrium::{PathBundle, StrategyProfile};
use crate::error::{Error, Result};
use crate::grid::{Axis, Grid};
use crate::models::AgentModel;
use crate::pde::{drift_field, Scheme, ValueSurface};
use crate::scalar::{lit, Real};

const MAGIC: [u8; 4] = *b"EQVS";
const VERSION: u32 = 1;

/// Renders a maximizer bitmask as the agent ids it contains, `|`-separated.
pub fn format_mask(mask: u32, agent_ids: &[u32]) -> String {
    let ids: Vec<String> = agent_ids
        .iter()
        .enumerate()
        .filter(|(i, _)| mask & (1 << i) != 0)
        .map(|(_, id)| id.to_string())
        .collect();
    ids.join("|")
}

/// Writes the surface as CSV: one row per `(t, node)` with the value, the
/// maximizer set, and each agent's drift `mu_i` (empty on the terminal
/// layer, where no backward difference exists).
pub fn write_surface_csv<T: Real>(
    out: &mut dyn IoWrite,
    surface: &ValueSurface<T>,
    agents: &[AgentModel<T>],
) -> Result<()> {
    let grid = &surface.grid;
    let d = grid.dim();
    let mut header = String::from("t");
    for j in 0..d {
        header.push_str(&format!(",x{j}"));
    }
    header.push_str(",v,maximizers");
    for a in agents {
        header.push_str(&format!(",mu_{}", a.id));
    }
    writeln!(out, "{header}")?;
    let drifts: Vec<_> = agents.iter().map(|a| drift_field(surface, a)).collect();
    for m in 0..surface.layers() {
        let t = grid.time(m);
        for node in 0..grid.node_count() {
            let x = grid.node_coords(node);
            write!(out, "{t}")?;
            for v in &x {
                write!(out, ",{v}")?;
            }
            write!(
                out,
                ",{},{}",
                surface.value(m, node),
                format_mask(surface.maximizer_mask(m, node), &surface.agent_ids)
            )?;
            for df in &drifts {
                if m < grid.time_steps {
                    write!(out, ",{}", df.value(m, node))?;
                } else {
                    write!(out, ",")?;
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Writes the extracted strategy profile as CSV: one row per `(t, node)`
/// with the maximizer set and each agent's holding.
pub fn write_strategies_csv<T: Real>(
    out: &mut dyn IoWrite,
    profile: &StrategyProfile<'_, T>,
) -> Result<()> {
    let surface = profile.surface;
    let grid = &surface.grid;
    let d = grid.dim();
    let mut header = String::from("t");
    for j in 0..d {
        header.push_str(&format!(",x{j}"));
    }
    header.push_str(",maximizers");
    for a in &profile.market.agents {
        header.push_str(&format!(",h_{}", a.id));
    }
    writeln!(out, "{header}")?;
    for m in 0..surface.layers() {
        let t = grid.time(m);
        for node in 0..grid.node_count() {
            write!(out, "{t}")?;
            for v in &grid.node_coords(node) {
                write!(out, ",{v}")?;
            }
            write!(
                out,
                ",{}",
                format_mask(surface.maximizer_mask(m, node), &surface.agent_ids)
            )?;
            for h in profile.holdings(m, node) {
                write!(out, ",{h}")?;
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Writes simulated paths as CSV: one row per `(path, step)` with the state,
/// and — when the bundle is annotated — the price path, the representative
/// maximizer, and each agent's holding.
pub fn write_paths_csv<T: Real>(out: &mut dyn IoWrite, bundle: &PathBundle<T>) -> Result<()> {
    let annotated = !bundle.z.is_empty();
    let mut header = String::from("path,step,t");
    for j in 0..bundle.dim {
        header.push_str(&format!(",x{j}"));
    }
    if annotated {
        header.push_str(",z,representative");
        for i in 0..bundle.n_agents {
            header.push_str(&format!(",h_{}", i + 1));
        }
    }
    writeln!(out, "{header}")?;
    let steps = bundle.steps();
    for p in 0..bundle.n_paths {
        for m in 0..=steps {
            write!(out, "{p},{m},{}", bundle.times[m])?;
            for v in bundle.state(p, m) {
                write!(out, ",{v}")?;
            }
            if annotated {
                write!(
                    out,
                    ",{},{}",
                    bundle.z_at(p, m),
                    bundle.representatives[p * (steps + 1) + m]
                )?;
                for i in 0..bundle.n_agents {
                    write!(out, ",{}", bundle.holding(p, m, i))?;
                }
            }
            writeln!(out)?;
        }
    }
    Ok(())
}

fn put_u32(out: &mut dyn IoWrite, v: u32) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(out: &mut dyn IoWrite, v: u64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(out: &mut dyn IoWrite, v: f64) -> Result<()> {
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_bytes<const N: usize>(input: &mut dyn IoRead) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

fn get_u32(input: &mut dyn IoRead) -> Result<u32> {
    Ok(u32::from_le_bytes(get_bytes(input)?))
}

fn get_u64(input: &mut dyn IoRead) -> Result<u64> {
    Ok(u64::from_le_bytes(get_bytes(input)?))
}

fn get_f64(input: &mut dyn IoRead) -> Result<f64> {
    Ok(f64::from_le_bytes(get_bytes(input)?))
}

/// Writes the surface in the compact binary layout documented in the module
/// docs. Values are stored as `f64` regardless of the working scalar type.
pub fn write_surface_binary<T: Real>(
    out: &mut dyn IoWrite,
    surface: &ValueSurface<T>,
) -> Result<()> {
    let grid = &surface.grid;
    out.write_all(&MAGIC)?;
    put_u32(out, VERSION)?;
    let scheme = match surface.scheme {
        Scheme::Explicit => 0u8,
        Scheme::Implicit => 1u8,
    };
    out.write_all(&[scheme, grid.dim() as u8])?;
    out.write_all(&(surface.agent_count() as u16).to_le_bytes())?;
    put_u64(out, grid.time_steps as u64)?;
    put_f64(out, grid.horizon.as_f64())?;
    put_f64(out, surface.scheme_tolerance.as_f64())?;
    put_f64(out, surface.residual_tolerance.as_f64())?;
    for a in &grid.axes {
        put_f64(out, a.lo.as_f64())?;
        put_f64(out, a.hi.as_f64())?;
        put_u64(out, a.nodes as u64)?;
    }
    for &id in &surface.agent_ids {
        put_u32(out, id)?;
    }
    for &v in surface.values_raw() {
        put_f64(out, v.as_f64())?;
    }
    for &m in surface.maximizers_raw() {
        put_u32(out, m)?;
    }
    Ok(())
}

/// Reads a surface written by [`write_surface_binary`].
pub fn read_surface_binary<T: Real>(input: &mut dyn IoRead) -> Result<ValueSurface<T>> {
    let magic: [u8; 4] = get_bytes(input)?;
    if magic != MAGIC {
        return Err(Error::MalformedSurface("bad magic bytes".into()));
    }
    let version = get_u32(input)?;
    if version != VERSION {
        return Err(Error::MalformedSurface(format!(
            "unsupported version {version}"
        )));
    }
    let [scheme_byte, dim] = get_bytes::<2>(input)?;
    let scheme = match scheme_byte {
        0 => Scheme::Explicit,
        1 => Scheme::Implicit,
        b => return Err(Error::MalformedSurface(format!("unknown scheme {b}"))),
    };
    if !(1..=2).contains(&dim) {
        return Err(Error::MalformedSurface(format!("unsupported dim {dim}")));
    }
    let n_agents = u16::from_le_bytes(get_bytes(input)?) as usize;
    if n_agents == 0 || n_agents > 32 {
        return Err(Error::MalformedSurface(format!(
            "agent count {n_agents} out of range"
        )));
    }
    let time_steps = get_u64(input)? as usize;
    let horizon = lit::<T>(get_f64(input)?);
    let scheme_tolerance = lit::<T>(get_f64(input)?);
    let residual_tolerance = lit::<T>(get_f64(input)?);
    let mut axes = Vec::with_capacity(dim as usize);
    for _ in 0..dim {
        let lo = lit::<T>(get_f64(input)?);
        let hi = lit::<T>(get_f64(input)?);
        let nodes = get_u64(input)? as usize;
        axes.push(Axis { lo, hi, nodes });
    }
    let grid = Grid::new(axes, time_steps, horizon)
        .map_err(|e| Error::MalformedSurface(e.to_string()))?;
    let mut agent_ids = Vec::with_capacity(n_agents);
    for _ in 0..n_agents {
        agent_ids.push(get_u32(input)?);
    }
    let total = (time_steps + 1) * grid.node_count();
    if total > (1 << 31) {
        return Err(Error::MalformedSurface("surface too large".into()));
    }
    let mut values = Vec::with_capacity(total);
    for _ in 0..total {
        values.push(lit::<T>(get_f64(input)?));
    }
    let mut maximizers = Vec::with_capacity(total);
    for _ in 0..total {
        maximizers.push(get_u32(input)?);
    }
    ValueSurface::from_raw(
        grid,
        agent_ids,
        scheme,
        scheme_tolerance,
        residual_tolerance,
        values,
        maximizers,
    )
}
