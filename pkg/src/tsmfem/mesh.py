"""Hexahedral meshes, node sets, load cases, the two benchmark geometry
generators, and a plain-text mesh file format.

Benchmark note: the exact specimen dimensions of the benchmark family are
not available in machine-readable form, so the generator defaults are
representative stand-ins; benchmark fidelity is anchored on the canonical
element counts (646 for the double notch, 594 for the quarter plate with
hole) and on the stable-time-step scale, which the defaults reproduce.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import hexa


class MeshFormatError(Exception):
    """Malformed or inconsistent mesh file."""


@dataclass
class Mesh:
    """Nodes, trilinear hex connectivity, named node sets, and named ordered
    element paths used for line extraction."""

    nodes: np.ndarray  # (n_nodes, 3) float64, meters
    elements: np.ndarray  # (n_elements, 8) int64
    node_sets: dict[str, np.ndarray] = field(default_factory=dict)
    element_paths: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def element_coords(self) -> np.ndarray:
        """(n_elements, 8, 3) nodal coordinates gathered per element."""
        return self.nodes[self.elements]

    def element_centroids(self) -> np.ndarray:
        return self.element_coords().mean(axis=1)


def validate_mesh(mesh: Mesh) -> None:
    """Check connectivity bounds, Jacobian positivity, and set sanity.

    Raises ValueError naming the first offending element or set.
    """
    n = mesh.n_nodes
    if mesh.nodes.ndim != 2 or mesh.nodes.shape[1] != 3:
        raise ValueError("nodes must be an (n, 3) array")
    if mesh.elements.ndim != 2 or mesh.elements.shape[1] != 8:
        raise ValueError("elements must be an (m, 8) array")
    bad = np.nonzero((mesh.elements < 0) | (mesh.elements >= n))[0]
    if bad.size:
        e = int(bad[0])
        raise ValueError(
            f"element {e} references node {int(mesh.elements[e].max())} "
            f"but the mesh has {n} nodes"
        )
    detJ = hexa.jacobian_determinants(mesh.element_coords())
    nonpos = np.nonzero((detJ <= 0.0).any(axis=1))[0]
    if nonpos.size:
        raise ValueError(f"element {int(nonpos[0])} has non-positive Jacobian")
    for name, ids in mesh.node_sets.items():
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= n):
            raise ValueError(f"node set '{name}' references nonexistent nodes")
        if np.unique(ids).size != ids.size:
            raise ValueError(f"node set '{name}' contains duplicate nodes")
    m = mesh.n_elements
    for name, ids in mesh.element_paths.items():
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= m):
            raise ValueError(f"element path '{name}' references nonexistent elements")
        # contiguity: consecutive path elements share a face (4 common nodes)
        for a, b in zip(ids[:-1], ids[1:]):
            shared = np.intersect1d(mesh.elements[a], mesh.elements[b]).size
            if shared < 4:
                raise ValueError(f"element path '{name}' is not contiguous at {int(a)}->{int(b)}")


@dataclass(frozen=True)
class DirichletRamp:
    """Prescribed displacement on one axis of a node set: linear ramp to
    ``amplitude`` at ``ramp_end``, held constant afterwards."""

    node_set: str
    axis: int  # 0, 1, 2
    amplitude: float  # m
    ramp_end: float  # s

    def value(self, t: float) -> float:
        return self.amplitude * min(t, self.ramp_end) / self.ramp_end


@dataclass(frozen=True)
class LoadCase:
    dirichlet: tuple[DirichletRamp, ...]
    total_time: float
    body_force: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "dirichlet", tuple(self.dirichlet))
        if self.total_time <= 0.0:
            raise ValueError("total_time must be positive")
        for d in self.dirichlet:
            if d.ramp_end <= 0.0 or d.ramp_end > self.total_time:
                raise ValueError(
                    f"ramp end {d.ramp_end} outside (0, total_time={self.total_time}]"
                )
            if d.axis not in (0, 1, 2):
                raise ValueError(f"axis must be 0, 1 or 2, got {d.axis}")


def validate_load_case(load: LoadCase, mesh: Mesh) -> None:
    """Check set references and that the constraints block all six
    rigid-body modes (the intent of requiring a fixed support)."""
    pairs = []
    for d in load.dirichlet:
        if d.node_set not in mesh.node_sets:
            raise ValueError(f"unknown node set '{d.node_set}' in load case")
        for n in mesh.node_sets[d.node_set]:
            pairs.append((int(n), d.axis))
    if not pairs:
        raise ValueError("load case constrains no degrees of freedom")
    pairs = sorted(set(pairs))
    x = mesh.nodes
    modes = np.zeros((6, mesh.n_nodes, 3))
    modes[0, :, 0] = 1.0
    modes[1, :, 1] = 1.0
    modes[2, :, 2] = 1.0
    modes[3, :, 1] = -x[:, 2]
    modes[3, :, 2] = x[:, 1]
    modes[4, :, 0] = x[:, 2]
    modes[4, :, 2] = -x[:, 0]
    modes[5, :, 0] = -x[:, 1]
    modes[5, :, 1] = x[:, 0]
    R = np.array([[modes[m, n, ax] for (n, ax) in pairs] for m in range(6)])
    scale = max(1.0, float(np.abs(x).max()))
    if np.linalg.matrix_rank(R, tol=1e-9 * scale) < 6:
        raise ValueError("constraints leave a rigid-body mode unconstrained")


# ---------------------------------------------------------------------------
# structured generation
# ---------------------------------------------------------------------------


def _structured_box(nx: int, ny: int, nz: int, width: float, height: float, thickness: float):
    """Structured grid nodes and hex connectivity over [0,W]x[0,H]x[0,T].

    Nodes are numbered x-fastest, then y, then z; cells likewise.
    """
    if min(nx, ny, nz) < 1:
        raise ValueError("resolution must be at least 1 in every direction")
    if min(width, height, thickness) <= 0.0:
        raise ValueError("box dimensions must be positive")
    xs = np.linspace(0.0, width, nx + 1)
    ys = np.linspace(0.0, height, ny + 1)
    zs = np.linspace(0.0, thickness, nz + 1)
    X, Y, Z = np.meshgrid(xs, ys, zs, indexing="ij")
    # node id = ix + (nx+1)*(iy + (ny+1)*iz)
    nodes = np.stack(
        [X.transpose(2, 1, 0).ravel(), Y.transpose(2, 1, 0).ravel(), Z.transpose(2, 1, 0).ravel()],
        axis=1,
    )

    def nid(ix, iy, iz):
        return ix + (nx + 1) * (iy + (ny + 1) * iz)

    cells = []
    for iz in range(nz):
        for iy in range(ny):
            for ix in range(nx):
                cells.append(
                    [
                        nid(ix, iy, iz),
                        nid(ix + 1, iy, iz),
                        nid(ix + 1, iy + 1, iz),
                        nid(ix, iy + 1, iz),
                        nid(ix, iy, iz + 1),
                        nid(ix + 1, iy, iz + 1),
                        nid(ix + 1, iy + 1, iz + 1),
                        nid(ix, iy + 1, iz + 1),
                    ]
                )
    return nodes, np.asarray(cells, dtype=np.int64)


def _compact(nodes, elements, keep_mask):
    """Drop removed cells and orphan nodes, renumbering both."""
    kept = elements[keep_mask]
    used = np.unique(kept)
    remap = -np.ones(nodes.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    return nodes[used], remap[kept]


def _nodes_where(nodes, predicate) -> np.ndarray:
    return np.nonzero(predicate(nodes))[0].astype(np.int64)


def generate_double_notch(
    width: float = 0.112,
    height: float = 0.100,
    thickness: float = 0.004,
    notch_depth: float = 0.036,
    notch_height: float = 0.012,
    nx: int = 28,
    ny: int = 25,
) -> Mesh:
    """Double-notched specimen: structured grid, one element through the
    thickness, rectangular notches cut from the left and right edges at
    mid-height.  Defaults give 646 elements.

    Sets: "top" (loaded), "bottom" (fixed), "front" (z=0 face);
    path "centerline" runs along the ligament between the notch tips.
    """
    if min(width, height, thickness) <= 0.0:
        raise ValueError("specimen dimensions must be positive")
    if notch_depth < 0.0 or notch_height < 0.0:
        raise ValueError("notch dimensions must be nonnegative")
    if 2.0 * notch_depth >= width:
        raise ValueError(
            f"notches overlap: 2*notch_depth={2 * notch_depth} >= width={width}"
        )
    if notch_height >= height:
        raise ValueError("notch height must be smaller than the specimen height")

    nodes, cells = _structured_box(nx, ny, 1, width, height, thickness)
    cent = nodes[cells].mean(axis=1)
    cx, cy = cent[:, 0], cent[:, 1]
    in_band = np.abs(cy - 0.5 * height) < 0.5 * notch_height
    in_notch = in_band & ((cx < notch_depth) | (cx > width - notch_depth))
    keep = ~in_notch
    nodes, elements = _compact(nodes, cells, keep)

    tol = 0.25 * min(width / nx, height / ny)
    mesh = Mesh(nodes, elements)
    mesh.node_sets["top"] = _nodes_where(nodes, lambda p: np.abs(p[:, 1] - height) < tol)
    mesh.node_sets["bottom"] = _nodes_where(nodes, lambda p: np.abs(p[:, 1]) < tol)
    mesh.node_sets["front"] = _nodes_where(nodes, lambda p: np.abs(p[:, 2]) < tol)

    cent = mesh.element_centroids()
    rows = np.round((cent[:, 1] - 0.5 * height / ny) / (height / ny)).astype(int)
    mid_row = int(np.round(0.5 * height / (height / ny) - 0.5))
    on_line = np.nonzero(rows == mid_row)[0]
    mesh.element_paths["centerline"] = on_line[np.argsort(cent[on_line, 0])]

    validate_mesh(mesh)
    return mesh


def generate_plate_with_hole(
    width: float = 0.096,
    height: float = 0.104,
    thickness: float = 0.004,
    hole_radius: float = 0.025,
    nx: int = 24,
    ny: int = 26,
) -> Mesh:
    """Quarter of a plate with a central hole (symmetry at x=0 and y=0),
    one element through the thickness; cells whose centroid lies inside the
    hole radius are removed.  Defaults give 594 elements.

    Sets: "top" (loaded), "symmetry_x" (x=0), "symmetry_y" (y=0),
    "front" (z=0 face), "hole_edge" (staircase boundary of the cut-out);
    path "midline" runs from the hole edge to the outer edge along y~0.
    """
    if min(width, height, thickness) <= 0.0:
        raise ValueError("plate dimensions must be positive")
    if hole_radius < 0.0:
        raise ValueError("hole radius must be nonnegative")
    if hole_radius >= min(width, height):
        raise ValueError(
            f"hole radius {hole_radius} must be smaller than the quarter dimensions"
        )

    nodes, cells = _structured_box(nx, ny, 1, width, height, thickness)
    cent = nodes[cells].mean(axis=1)
    in_hole = cent[:, 0] ** 2 + cent[:, 1] ** 2 < hole_radius**2
    keep = ~in_hole

    removed_nodes = np.unique(cells[in_hole]) if in_hole.any() else np.array([], dtype=np.int64)
    kept_nodes = np.unique(cells[keep])
    interface = np.intersect1d(removed_nodes, kept_nodes)

    used = kept_nodes
    remap = -np.ones(nodes.shape[0], dtype=np.int64)
    remap[used] = np.arange(used.size)
    elements = remap[cells[keep]]
    hole_edge = remap[interface]
    nodes = nodes[used]

    tol = 0.25 * min(width / nx, height / ny)
    mesh = Mesh(nodes, elements)
    mesh.node_sets["top"] = _nodes_where(nodes, lambda p: np.abs(p[:, 1] - height) < tol)
    mesh.node_sets["symmetry_x"] = _nodes_where(nodes, lambda p: np.abs(p[:, 0]) < tol)
    mesh.node_sets["symmetry_y"] = _nodes_where(nodes, lambda p: np.abs(p[:, 1]) < tol)
    mesh.node_sets["front"] = _nodes_where(nodes, lambda p: np.abs(p[:, 2]) < tol)
    mesh.node_sets["hole_edge"] = np.sort(hole_edge)

    cent = mesh.element_centroids()
    bottom_row = np.nonzero(np.abs(cent[:, 1] - 0.5 * height / ny) < tol)[0]
    mesh.element_paths["midline"] = bottom_row[np.argsort(cent[bottom_row, 0])]

    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# plain-text mesh file: sections NODES / ELEMENTS / SETS / ELEMENT_PATHS
# ---------------------------------------------------------------------------

_MAGIC = "# tsmfem mesh 1"


def save_mesh(mesh: Mesh, path) -> None:
    """Write the mesh as diffable plain text (floats via repr: the
    round trip reproduces coordinates bit-exactly)."""
    lines = [_MAGIC, f"NODES {mesh.n_nodes}"]
    for p in mesh.nodes:
        lines.append(f"{float(p[0])!r} {float(p[1])!r} {float(p[2])!r}")
    lines.append(f"ELEMENTS {mesh.n_elements}")
    for e in mesh.elements:
        lines.append(" ".join(str(int(v)) for v in e))
    lines.append(f"SETS {len(mesh.node_sets)}")
    for name, ids in mesh.node_sets.items():
        lines.append(f"{name} {len(ids)} " + " ".join(str(int(v)) for v in ids))
    lines.append(f"ELEMENT_PATHS {len(mesh.element_paths)}")
    for name, ids in mesh.element_paths.items():
        lines.append(f"{name} {len(ids)} " + " ".join(str(int(v)) for v in ids))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _expect_header(tokens, keyword, lineno):
    if len(tokens) != 2 or tokens[0] != keyword:
        raise MeshFormatError(f"line {lineno}: expected '{keyword} <count>'")
    try:
        return int(tokens[1])
    except ValueError as exc:
        raise MeshFormatError(f"line {lineno}: bad count in {keyword} header") from exc


def load_mesh(path) -> Mesh:
    """Read a mesh file, validating structure and geometry."""
    with open(path) as fh:
        raw = fh.read().splitlines()
    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw) if ln.strip()]
    if not lines or lines[0][1] != _MAGIC:
        raise MeshFormatError(f"not a mesh file (missing '{_MAGIC}' header)")
    pos = 1

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MeshFormatError("unexpected end of file")
        item = lines[pos]
        pos += 1
        return item

    lineno, header = take()
    n_nodes = _expect_header(header.split(), "NODES", lineno)
    nodes = np.empty((n_nodes, 3))
    for i in range(n_nodes):
        lineno, ln = take()
        parts = ln.split()
        if len(parts) != 3:
            raise MeshFormatError(f"line {lineno}: node record needs 3 coordinates")
        try:
            nodes[i] = [float(v) for v in parts]
        except ValueError as exc:
            raise MeshFormatError(f"line {lineno}: bad coordinate") from exc

    lineno, header = take()
    n_elem = _expect_header(header.split(), "ELEMENTS", lineno)
    elements = np.empty((n_elem, 8), dtype=np.int64)
    for i in range(n_elem):
        lineno, ln = take()
        parts = ln.split()
        if len(parts) != 8:
            raise MeshFormatError(f"line {lineno}: element record needs 8 node ids")
        try:
            elements[i] = [int(v) for v in parts]
        except ValueError as exc:
            raise MeshFormatError(f"line {lineno}: bad node id") from exc

    def read_named(keyword):
        lineno, header = take()
        count = _expect_header(header.split(), keyword, lineno)
        out = {}
        for _ in range(count):
            lineno, ln = take()
            parts = ln.split()
            if len(parts) < 2:
                raise MeshFormatError(f"line {lineno}: expected '<name> <count> ids...'")
            name, n = parts[0], int(parts[1])
            if len(parts) != 2 + n:
                raise MeshFormatError(f"line {lineno}: '{name}' lists {len(parts) - 2} ids, header says {n}")
            out[name] = np.asarray([int(v) for v in parts[2:]], dtype=np.int64)
        return out

    node_sets = read_named("SETS")
    element_paths = read_named("ELEMENT_PATHS") if pos < len(lines) else {}

    mesh = Mesh(nodes, elements, node_sets, element_paths)
    validate_mesh(mesh)
    return mesh
