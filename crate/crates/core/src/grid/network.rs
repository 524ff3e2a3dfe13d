use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::GridError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Generator,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: usize,
    pub kind: BusKind,
    /// Nominal net active-power injection (pu). Loads are negative.
    #[serde(default)]
    pub injection: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Line {
    pub from: usize,
    pub to: usize,
    /// Series susceptance 1/x (pu).
    pub susceptance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Generator {
    pub bus: usize,
    /// M = 2H / omega_s (s^2).
    pub inertia: f64,
    /// Damping (pu power per pu frequency).
    pub damping: f64,
    /// Droop gain 1/R (pu power per pu frequency).
    pub droop_gain: f64,
    pub governor_time_constant: f64,
    /// Share of the area AGC signal, in [0, 1].
    pub participation: f64,
    pub area: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    schema_version: Option<u32>,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
}

/// Validated bus network. Immutable after construction.
#[derive(Debug, Clone)]
pub struct BusNetwork {
    name: String,
    buses: Vec<Bus>,
    lines: Vec<Line>,
    generators: Vec<Generator>,
    index: HashMap<usize, usize>,
    bus_area: Vec<usize>,
}

pub fn load_network(path: impl AsRef<Path>) -> Result<BusNetwork, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_network(&text)
}

pub fn parse_network(text: &str) -> Result<BusNetwork, GridError> {
    let file: NetworkFile = toml::from_str(text).map_err(|e| GridError::Parse(e.to_string()))?;
    if let Some(v) = file.schema_version {
        if v != 1 {
            return Err(GridError::validation("schema_version", format!("unsupported version {v}")));
        }
    }
    BusNetwork::new(
        file.name.unwrap_or_else(|| "network".into()),
        file.buses,
        file.lines,
        file.generators,
    )
}

impl BusNetwork {
    pub fn new(
        name: impl Into<String>,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
    ) -> Result<Self, GridError> {
        let net = Self::assemble(name.into(), buses, lines, generators)?;
        let components = net.components();
        if components.len() > 1 {
            let island = components
                .iter()
                .find(|c| !c.contains(&net.buses[0].id))
                .cloned()
                .unwrap_or_default();
            return Err(GridError::validation(
                "lines",
                format!("network is disconnected; buses {island:?} are unreachable"),
            ));
        }
        Ok(net)
    }

    /// Builds and checks everything except connectivity.
    pub(crate) fn assemble(
        name: String,
        buses: Vec<Bus>,
        lines: Vec<Line>,
        generators: Vec<Generator>,
    ) -> Result<Self, GridError> {
        if buses.is_empty() {
            return Err(GridError::validation("buses", "no buses"));
        }
        let mut index = HashMap::new();
        for (i, b) in buses.iter().enumerate() {
            if index.insert(b.id, i).is_some() {
                return Err(GridError::validation(format!("buses[{i}].id"), format!("duplicate bus id {}", b.id)));
            }
            if !b.injection.is_finite() {
                return Err(GridError::validation(format!("buses[{i}].injection"), "not finite"));
            }
        }
        for (i, l) in lines.iter().enumerate() {
            if !index.contains_key(&l.from) {
                return Err(GridError::validation(format!("lines[{i}].from"), format!("unknown bus {}", l.from)));
            }
            if !index.contains_key(&l.to) {
                return Err(GridError::validation(format!("lines[{i}].to"), format!("unknown bus {}", l.to)));
            }
            if l.from == l.to {
                return Err(GridError::validation(format!("lines[{i}]"), "self-loop"));
            }
            if !(l.susceptance > 0.0 && l.susceptance.is_finite()) {
                return Err(GridError::validation(format!("lines[{i}].susceptance"), "must be positive"));
            }
        }
        if generators.is_empty() {
            return Err(GridError::validation("generators", "at least one generator is required"));
        }
        let mut gen_buses = HashMap::new();
        let mut area_share: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, g) in generators.iter().enumerate() {
            let Some(&bi) = index.get(&g.bus) else {
                return Err(GridError::validation(format!("generators[{i}].bus"), format!("unknown bus {}", g.bus)));
            };
            if buses[bi].kind != BusKind::Generator {
                return Err(GridError::validation(
                    format!("generators[{i}].bus"),
                    format!("bus {} is not a generator bus", g.bus),
                ));
            }
            if gen_buses.insert(g.bus, i).is_some() {
                return Err(GridError::validation(format!("generators[{i}].bus"), format!("bus {} has two generators", g.bus)));
            }
            for (field, v) in [
                ("inertia", g.inertia),
                ("damping", g.damping),
                ("governor_time_constant", g.governor_time_constant),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(GridError::validation(format!("generators[{i}].{field}"), "must be positive"));
                }
            }
            if !(g.droop_gain >= 0.0 && g.droop_gain.is_finite()) {
                return Err(GridError::validation(format!("generators[{i}].droop_gain"), "must be non-negative"));
            }
            if !(0.0..=1.0).contains(&g.participation) {
                return Err(GridError::validation(format!("generators[{i}].participation"), "must lie in [0, 1]"));
            }
            if g.area == 0 {
                return Err(GridError::validation(format!("generators[{i}].area"), "areas are numbered from 1"));
            }
            *area_share.entry(g.area).or_default() += g.participation;
        }
        for (i, b) in buses.iter().enumerate() {
            if b.kind == BusKind::Generator && !gen_buses.contains_key(&b.id) {
                return Err(GridError::validation(
                    format!("buses[{i}].kind"),
                    format!("generator bus {} has no generator entry", b.id),
                ));
            }
        }
        for (area, share) in &area_share {
            if (share - 1.0).abs() > 1e-6 {
                return Err(GridError::validation(
                    "generators.participation",
                    format!("participation factors of area {area} sum to {share}, expected 1"),
                ));
            }
        }
        let mut net = Self {
            name,
            buses,
            lines,
            generators,
            index,
            bus_area: Vec::new(),
        };
        net.bus_area = net.assign_bus_areas();
        Ok(net)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn generators(&self) -> &[Generator] {
        &self.generators
    }

    pub fn bus_ids(&self) -> Vec<usize> {
        self.buses.iter().map(|b| b.id).collect()
    }

    pub fn bus_index(&self, id: usize) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn num_buses(&self) -> usize {
        self.buses.len()
    }

    /// Sorted distinct area ids.
    pub fn areas(&self) -> Vec<usize> {
        let mut a: Vec<usize> = self.generators.iter().map(|g| g.area).collect();
        a.sort_unstable();
        a.dedup();
        a
    }

    /// Area of every bus (by bus index). Load buses join the area of the nearest
    /// generator bus in line hops; ties go to the lowest area id.
    pub fn bus_areas(&self) -> &[usize] {
        &self.bus_area
    }

    pub(crate) fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for l in &self.lines {
            let (a, b) = (self.index[&l.from], self.index[&l.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        adj
    }

    /// Connected components as sorted bus-id lists.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.buses.len()];
        let mut out = Vec::new();
        for start in 0..self.buses.len() {
            if seen[start] {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(u) = queue.pop_front() {
                comp.push(self.buses[u].id);
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        queue.push_back(v);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    fn assign_bus_areas(&self) -> Vec<usize> {
        let adj = self.adjacency();
        let n = self.buses.len();
        let mut dist = vec![usize::MAX; n];
        let mut area = vec![0usize; n];
        let mut seeds: Vec<(usize, usize)> = self
            .generators
            .iter()
            .map(|g| (g.area, self.index[&g.bus]))
            .collect();
        seeds.sort_unstable();
        let mut queue = VecDeque::new();
        for (a, bi) in seeds {
            dist[bi] = 0;
            area[bi] = a;
            queue.push_back(bi);
        }
        // Multi-source BFS with area-sorted seeding assigns ties to the lowest area.
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    area[v] = area[u];
                    queue.push_back(v);
                } else if dist[v] == dist[u] + 1 && area[u] < area[v] {
                    area[v] = area[u];
                }
            }
        }
        area
    }

    /// Checks the structural shape of a benchmark system.
    pub fn expect_shape(&self, buses: usize, generators: usize, areas: usize) -> Result<(), GridError> {
        if self.buses.len() != buses {
            return Err(GridError::validation("buses", format!("expected {buses} buses, found {}", self.buses.len())));
        }
        if self.generators.len() != generators {
            return Err(GridError::validation(
                "generators",
                format!("expected {generators} generators, found {}", self.generators.len()),
            ));
        }
        let found = self.areas().len();
        if found != areas {
            return Err(GridError::validation("generators.area", format!("expected {areas} areas, found {found}")));
        }
        Ok(())
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) const TWO_BUS: &str = r#"
name = "toy2"
[[buses]]
id = 1
kind = "generator"
injection = 0.5
[[buses]]
id = 2
kind = "load"
injection = -0.5
[[lines]]
from = 1
to = 2
susceptance = 5.0
[[generators]]
bus = 1
inertia = 0.0265
damping = 1.0
droop_gain = 20.0
governor_time_constant = 0.5
participation = 1.0
area = 1
"#;

    pub(crate) fn toy() -> BusNetwork {
        parse_network(TWO_BUS).unwrap()
    }

    #[test]
    fn parses_two_bus_toy() {
        let net = toy();
        assert_eq!(net.num_buses(), 2);
        assert_eq!(net.generators().len(), 1);
        assert_eq!(net.bus_areas(), &[1, 1]);
    }

    #[test]
    fn unknown_line_endpoint_names_field() {
        let text = TWO_BUS.replace("to = 2", "to = 99");
        let err = parse_network(&text).unwrap_err();
        match err {
            GridError::Validation { field, reason } => {
                assert_eq!(field, "lines[0].to");
                assert!(reason.contains("99"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn disconnected_network_is_rejected() {
        let text = format!("{TWO_BUS}\n[[buses]]\nid = 3\nkind = \"load\"\n");
        let err = parse_network(&text).unwrap_err();
        assert!(matches!(err, GridError::Validation { ref field, ref reason } if field == "lines" && reason.contains("[3]")));
    }

    #[test]
    fn participation_must_sum_to_one() {
        let text = TWO_BUS.replace("participation = 1.0", "participation = 0.5");
        assert!(matches!(parse_network(&text), Err(GridError::Validation { .. })));
    }

    #[test]
    fn malformed_file_is_a_parse_error() {
        assert!(matches!(parse_network("[[buses]]\nid = \"x\""), Err(GridError::Parse(_))));
        assert!(matches!(parse_network(""), Err(GridError::Parse(_))));
    }

    #[test]
    fn non_positive_values_rejected() {
        let text = TWO_BUS.replace("susceptance = 5.0", "susceptance = 0.0");
        assert!(matches!(parse_network(&text), Err(GridError::Validation { field, .. }) if field == "lines[0].susceptance"));
        let text = TWO_BUS.replace("inertia = 0.0265", "inertia = -1.0");
        assert!(matches!(parse_network(&text), Err(GridError::Validation { field, .. }) if field == "generators[0].inertia"));
    }
}
