//! Mesh of CPU chiplets, GPU chiplets and memory controllers, plus XY routing.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::TopologyError;

/// Grid coordinate of a mesh node. `x` is the column, `y` the row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId {
    pub x: u16,
    pub y: u16,
}

impl NodeId {
    pub const fn new(x: u16, y: u16) -> Self {
        Self { x, y }
    }

    pub fn manhattan(self, other: NodeId) -> u32 {
        (self.x.abs_diff(other.x) + self.y.abs_diff(other.y)) as u32
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeRole {
    CpuChiplet,
    GpuChiplet,
    MemoryController,
}

impl NodeRole {
    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'C' => Some(NodeRole::CpuChiplet),
            'G' => Some(NodeRole::GpuChiplet),
            'M' => Some(NodeRole::MemoryController),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            NodeRole::CpuChiplet => 'C',
            NodeRole::GpuChiplet => 'G',
            NodeRole::MemoryController => 'M',
        }
    }
}

/// Router port. The first four are mesh directions; `Local` is the
/// injection input and `Eject` the delivery output of the same port slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Port {
    East,
    West,
    North,
    South,
    Local,
}

pub const NUM_PORTS: usize = 5;

impl Port {
    pub const ALL: [Port; NUM_PORTS] = [
        Port::East,
        Port::West,
        Port::North,
        Port::South,
        Port::Local,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    #[inline]
    pub fn from_index(i: usize) -> Port {
        Port::ALL[i]
    }

    /// The input port on the neighbor that this output port feeds.
    pub fn opposite(self) -> Port {
        match self {
            Port::East => Port::West,
            Port::West => Port::East,
            Port::North => Port::South,
            Port::South => Port::North,
            Port::Local => Port::Local,
        }
    }
}

/// Output selected by route computation. `Eject` leaves the network at the
/// current node.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OutputPort {
    East,
    West,
    North,
    South,
    Eject,
}

impl OutputPort {
    pub fn port(self) -> Port {
        match self {
            OutputPort::East => Port::East,
            OutputPort::West => Port::West,
            OutputPort::North => Port::North,
            OutputPort::South => Port::South,
            OutputPort::Eject => Port::Local,
        }
    }
}

/// Dimension-order routing: resolve the column offset first, then the row.
/// North is the direction of increasing `y`.
pub fn xy_route(current: NodeId, dest: NodeId) -> OutputPort {
    use std::cmp::Ordering::*;
    match (dest.x.cmp(&current.x), dest.y.cmp(&current.y)) {
        (Greater, _) => OutputPort::East,
        (Less, _) => OutputPort::West,
        (Equal, Greater) => OutputPort::North,
        (Equal, Less) => OutputPort::South,
        (Equal, Equal) => OutputPort::Eject,
    }
}

/// How node roles are laid out on the grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Memory controllers on the two edge columns (corners excluded), CPU and
    /// GPU chiplets interleaved checkerboard-style on the remaining nodes.
    Default,
    /// The default role multiset, shuffled deterministically by `seed`.
    Shuffled { seed: u64 },
    /// Explicit row-major grid of `C`/`G`/`M` characters. Row 0 is `y = 0`.
    Grid(Vec<String>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Topology {
    width: u16,
    height: u16,
    roles: Vec<NodeRole>,
    subnet_count: usize,
}

impl Topology {
    pub fn build(
        width: usize,
        height: usize,
        placement: &Placement,
        subnet_count: usize,
    ) -> Result<Topology, TopologyError> {
        if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
            return Err(TopologyError::Dimensions { width, height });
        }
        if subnet_count != 2 && subnet_count != 4 {
            return Err(TopologyError::SubnetCount(subnet_count));
        }
        let roles = match placement {
            Placement::Default => default_roles(width, height)?,
            Placement::Shuffled { seed } => {
                let mut roles = default_roles(width, height)?;
                roles.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
                roles
            }
            Placement::Grid(rows) => grid_roles(width, height, rows)?,
        };
        Ok(Topology {
            width: width as u16,
            height: height as u16,
            roles,
            subnet_count,
        })
    }

    pub fn width(&self) -> usize {
        self.width as usize
    }

    pub fn height(&self) -> usize {
        self.height as usize
    }

    pub fn num_nodes(&self) -> usize {
        self.roles.len()
    }

    pub fn subnet_count(&self) -> usize {
        self.subnet_count
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.x < self.width && node.y < self.height
    }

    #[inline]
    pub fn index_of(&self, node: NodeId) -> usize {
        node.y as usize * self.width as usize + node.x as usize
    }

    #[inline]
    pub fn node_at(&self, index: usize) -> NodeId {
        NodeId::new(
            (index % self.width as usize) as u16,
            (index / self.width as usize) as u16,
        )
    }

    pub fn role(&self, node: NodeId) -> NodeRole {
        self.roles[self.index_of(node)]
    }

    pub fn roles(&self) -> &[NodeRole] {
        &self.roles
    }

    /// Nodes in row-major order.
    pub fn nodes(&self) -> impl Iterator<Item = NodeId> + '_ {
        (0..self.num_nodes()).map(|i| self.node_at(i))
    }

    pub fn nodes_with_role(&self, role: NodeRole) -> Vec<NodeId> {
        self.nodes().filter(|&n| self.role(n) == role).collect()
    }

    pub fn count(&self, role: NodeRole) -> usize {
        self.roles.iter().filter(|&&r| r == role).count()
    }

    /// Neighbor reached through a mesh port, if it exists.
    pub fn neighbor(&self, node: NodeId, port: Port) -> Option<NodeId> {
        let (x, y) = (node.x, node.y);
        match port {
            Port::East if x + 1 < self.width => Some(NodeId::new(x + 1, y)),
            Port::West if x > 0 => Some(NodeId::new(x - 1, y)),
            Port::North if y + 1 < self.height => Some(NodeId::new(x, y + 1)),
            Port::South if y > 0 => Some(NodeId::new(x, y - 1)),
            _ => None,
        }
    }

    /// Bounds-checked XY routing.
    pub fn route(&self, current: NodeId, dest: NodeId) -> Result<OutputPort, TopologyError> {
        for n in [current, dest] {
            if !self.contains(n) {
                return Err(TopologyError::OutOfBounds {
                    node: n,
                    width: self.width(),
                    height: self.height(),
                });
            }
        }
        Ok(xy_route(current, dest))
    }

    /// Role grid as rows of `C`/`G`/`M`, row 0 first.
    pub fn role_grid(&self) -> Vec<String> {
        (0..self.height())
            .map(|y| {
                (0..self.width())
                    .map(|x| self.roles[y * self.width() + x].as_char())
                    .collect()
            })
            .collect()
    }
}

fn default_roles(width: usize, height: usize) -> Result<Vec<NodeRole>, TopologyError> {
    if width < 2 || height < 3 {
        return Err(TopologyError::NoDefaultPlacement { width, height });
    }
    let mut roles = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let edge_column = x == 0 || x == width - 1;
            let corner_row = y == 0 || y == height - 1;
            let role = if edge_column && !corner_row {
                NodeRole::MemoryController
            } else if (x + y) % 2 == 0 {
                NodeRole::CpuChiplet
            } else {
                NodeRole::GpuChiplet
            };
            roles.push(role);
        }
    }
    Ok(roles)
}

fn grid_roles(
    width: usize,
    height: usize,
    rows: &[String],
) -> Result<Vec<NodeRole>, TopologyError> {
    let assigned: usize = rows.iter().map(|r| r.chars().count()).sum();
    if rows.len() != height || rows.iter().any(|r| r.chars().count() != width) {
        return Err(TopologyError::RoleCount {
            expected: width * height,
            assigned,
        });
    }
    let mut roles = Vec::with_capacity(width * height);
    for row in rows {
        for c in row.chars() {
            roles.push(NodeRole::from_char(c).ok_or(TopologyError::BadRole(c))?);
        }
    }
    Ok(roles)
}
