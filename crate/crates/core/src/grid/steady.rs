use nalgebra::{DMatrix, DVector};

use super::{BusKind, BusNetwork, GridError};

/// DC power-flow operating point.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// Bus angles (rad) in network bus order; the reference bus sits at 0.
    pub angles: Vec<f64>,
    /// Mechanical power of each generator (pu), in network generator order.
    pub mechanical_power: Vec<f64>,
    /// Balanced injections actually solved for (pu), in bus order.
    pub injections: Vec<f64>,
    /// max |B theta - P| over all buses.
    pub residual: f64,
    pub reference_bus: usize,
}

/// Laplacian of line susceptances in bus order.
pub(crate) fn susceptance_matrix(net: &BusNetwork) -> DMatrix<f64> {
    let n = net.num_buses();
    let mut b = DMatrix::zeros(n, n);
    for l in net.lines() {
        let i = net.bus_index(l.from).unwrap();
        let j = net.bus_index(l.to).unwrap();
        b[(i, i)] += l.susceptance;
        b[(j, j)] += l.susceptance;
        b[(i, j)] -= l.susceptance;
        b[(j, i)] -= l.susceptance;
    }
    b
}

pub(crate) fn reference_generator(net: &BusNetwork) -> usize {
    net.generators()
        .iter()
        .enumerate()
        .min_by_key(|(_, g)| g.bus)
        .map(|(i, _)| i)
        .expect("validated network has a generator")
}

/// Solves the DC power flow. Any imbalance in the nominal injections is absorbed
/// by the lowest-id generator bus, which is also the angle reference.
pub fn steady_state(net: &BusNetwork) -> Result<OperatingPoint, GridError> {
    let n = net.num_buses();
    let ref_gen = reference_generator(net);
    let ref_bus = net.generators()[ref_gen].bus;
    let r = net.bus_index(ref_bus).unwrap();

    let mut p: Vec<f64> = net.buses().iter().map(|b| b.injection).collect();
    let mismatch: f64 = p.iter().sum();
    p[r] -= mismatch;

    let b = susceptance_matrix(net);
    let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
    let mut theta = vec![0.0; n];
    if !keep.is_empty() {
        let reduced = DMatrix::from_fn(keep.len(), keep.len(), |i, j| b[(keep[i], keep[j])]);
        let rhs = DVector::from_iterator(keep.len(), keep.iter().map(|&i| p[i]));
        let chol = reduced.cholesky().ok_or_else(|| singular(net, ref_bus))?;
        let sol = chol.solve(&rhs);
        for (k, &i) in keep.iter().enumerate() {
            theta[i] = sol[k];
        }
    }

    let th = DVector::from_column_slice(&theta);
    let flows = &b * &th;
    let residual = (0..n).map(|i| (flows[i] - p[i]).abs()).fold(0.0, f64::max);

    let mechanical_power = net
        .generators()
        .iter()
        .map(|g| {
            let i = net.bus_index(g.bus).unwrap();
            debug_assert_eq!(net.buses()[i].kind, BusKind::Generator);
            p[i]
        })
        .collect();

    Ok(OperatingPoint {
        angles: theta,
        mechanical_power,
        injections: p,
        residual,
        reference_bus: ref_bus,
    })
}

fn singular(net: &BusNetwork, ref_bus: usize) -> GridError {
    let component = net
        .components()
        .into_iter()
        .find(|c| !c.contains(&ref_bus))
        .unwrap_or_default();
    GridError::Singular { component }
}
