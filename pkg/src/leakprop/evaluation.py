"""Ground-truth values on a uniform grid, MSVE, leakage scores and grid files."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from leakprop import _rng
from leakprop._backend import kernels
from leakprop.envsim import MAX_LEN, MapLayout, TrajectoryDataset

CELL_SIZE = 10.0
_TAG_TRUTH = 4


@dataclass
class ValueGrid:
    map_id: str
    cell_size: float
    n_cols: int
    n_rows: int
    free: np.ndarray                 # (n_rows, n_cols) bool
    values: np.ndarray               # (n_rows, n_cols), nan off free cells
    stderr: np.ndarray | None = None

    @property
    def centers(self) -> np.ndarray:
        cx = (np.arange(self.n_cols) + 0.5) * self.cell_size
        cy = (np.arange(self.n_rows) + 0.5) * self.cell_size
        X, Y = np.meshgrid(cx, cy)
        return np.stack([X, Y], axis=-1)

    def free_centers(self) -> np.ndarray:
        return self.centers[self.free]

    def aligned(self, other: "ValueGrid") -> bool:
        return (self.map_id == other.map_id and self.cell_size == other.cell_size
                and self.n_cols == other.n_cols and self.n_rows == other.n_rows
                and np.array_equal(self.free, other.free))

    def __eq__(self, other):
        if not isinstance(other, ValueGrid) or not self.aligned(other):
            return False
        same_se = (self.stderr is None and other.stderr is None) or (
            self.stderr is not None and other.stderr is not None
            and np.array_equal(self.stderr, other.stderr, equal_nan=True))
        return np.array_equal(self.values, other.values, equal_nan=True) and same_se

    def with_values(self, values, stderr=None) -> "ValueGrid":
        return ValueGrid(self.map_id, self.cell_size, self.n_cols, self.n_rows,
                         self.free.copy(), values, stderr)


def empty_grid(layout: MapLayout, cell_size: float = CELL_SIZE) -> ValueGrid:
    """Grid covering the map; a cell is free unless its centre is on a wall or in a reward zone."""
    if cell_size <= 0:
        raise ValueError("cell_size must be positive")
    n_cols = int(round(layout.width / cell_size))
    n_rows = int(round(layout.height / cell_size))
    if n_cols < 2 or n_rows < 2:
        raise ValueError("grid needs at least 2 cells per side")
    g = ValueGrid(layout.map_id, cell_size, n_cols, n_rows, np.zeros((n_rows, n_cols), bool),
                  np.full((n_rows, n_cols), np.nan))
    for j, i in np.ndindex(n_rows, n_cols):
        x, y = (i + 0.5) * cell_size, (j + 0.5) * cell_size
        g.free[j, i] = layout.is_valid_state(x, y) and layout.zone_at(x, y) < 0
    return g


def rollout_keys(seed: int, n_cells: int, rollouts: int) -> np.ndarray:
    return np.array([_rng.substream(seed, _TAG_TRUTH, c, k)
                     for c in range(n_cells) for k in range(rollouts)], dtype=np.uint64)


def ground_truth(layout: MapLayout, gamma: float = 0.99, cell_size: float = CELL_SIZE,
                 rollouts_per_cell: int = 1000, seed: int = 0, max_len: int = MAX_LEN) -> ValueGrid:
    """Average discounted Monte-Carlo return of seeded rollouts from every free cell centre."""
    if rollouts_per_cell < 1:
        raise ValueError("rollouts_per_cell must be >= 1")
    grid = empty_grid(layout, cell_size)
    centers = grid.free_centers()
    n_cells = len(centers)
    starts = np.ascontiguousarray(np.repeat(centers, rollouts_per_cell, axis=0))
    keys = rollout_keys(seed, n_cells, rollouts_per_cell)
    dx, dy = layout.move_table
    steps, zone = kernels.hitting_times(layout.wall_array, layout.zone_array, layout.width,
                                        layout.height, dx, dy, starts, keys, max_len)
    steps, zone = np.asarray(steps), np.asarray(zone)
    hit = zone >= 0
    returns = np.zeros(len(steps))
    returns[hit] = layout.zone_rewards[zone[hit]] * np.power(gamma, steps[hit] - 1)
    returns = returns.reshape(n_cells, rollouts_per_cell)
    values = grid.values.copy()
    values[grid.free] = returns.mean(axis=1)
    stderr = np.full_like(values, np.nan)
    if rollouts_per_cell > 1:
        stderr[grid.free] = returns.std(axis=1, ddof=1) / math.sqrt(rollouts_per_cell)
    else:
        stderr[grid.free] = 0.0
    return grid.with_values(values, stderr)


def predict_grid(predict, layout: MapLayout, cell_size: float = CELL_SIZE) -> ValueGrid:
    """Evaluate ``predict(positions) -> values`` on every free cell centre."""
    grid = empty_grid(layout, cell_size)
    values = grid.values.copy()
    values[grid.free] = np.asarray(predict(grid.free_centers()), dtype=np.float64).reshape(-1)
    return grid.with_values(values)


def error_grid(pred: ValueGrid, truth: ValueGrid) -> ValueGrid:
    if not pred.aligned(truth):
        raise ValueError("grids are not aligned")
    return pred.with_values(pred.values - truth.values)


def visitation_weights(grid: ValueGrid, dataset: TrajectoryDataset) -> np.ndarray:
    """Normalized occupancy of the dataset's training states per free cell."""
    states = np.concatenate([e.states[:-1] for e in dataset.episodes])
    i = np.clip((states[:, 0] // grid.cell_size).astype(int), 0, grid.n_cols - 1)
    j = np.clip((states[:, 1] // grid.cell_size).astype(int), 0, grid.n_rows - 1)
    counts = np.zeros((grid.n_rows, grid.n_cols))
    np.add.at(counts, (j, i), 1.0)
    counts[~grid.free] = 0.0
    total = counts.sum()
    if total == 0:
        raise ValueError("dataset never visits a free cell")
    return counts / total


def msve(pred: ValueGrid, truth: ValueGrid, weighting: str = "uniform",
         dataset: TrajectoryDataset | None = None) -> float:
    """Weighted mean squared error over free cells."""
    if not pred.aligned(truth):
        raise ValueError("grids are not aligned")
    err = (pred.values - truth.values)[truth.free]
    if weighting == "uniform":
        return float(np.mean(err * err))
    if weighting == "visitation":
        if dataset is None:
            raise ValueError("visitation weighting needs a dataset")
        w = visitation_weights(truth, dataset)[truth.free]
        return float(np.sum(w * err * err))
    raise ValueError(f"unknown weighting {weighting!r}")


def region_mask(grid: ValueGrid, region) -> np.ndarray:
    x0, y0, x1, y1 = region
    c = grid.centers
    inside = (c[..., 0] >= x0) & (c[..., 0] <= x1) & (c[..., 1] >= y0) & (c[..., 1] <= y1)
    return inside & grid.free


def leakage_score(errors: ValueGrid, region) -> float:
    """Mean signed error over the free cells of a rectangle; positive means over-estimation."""
    mask = region_mask(errors, region)
    if not mask.any():
        raise ValueError(f"region {region} contains no free cells")
    return float(np.mean(errors.values[mask]))


def wall_distance(layout: MapLayout, grid: ValueGrid) -> np.ndarray:
    """Distance from each cell centre to the nearest wall segment."""
    c = grid.centers.reshape(-1, 2)
    best = np.full(len(c), np.inf)
    for ax, ay, bx, by in layout.walls:
        ux, uy = bx - ax, by - ay
        t = np.clip(((c[:, 0] - ax) * ux + (c[:, 1] - ay) * uy) / (ux * ux + uy * uy), 0, 1)
        d = np.hypot(c[:, 0] - ax - t * ux, c[:, 1] - ay - t * uy)
        best = np.minimum(best, d)
    return best.reshape(grid.n_rows, grid.n_cols)


@dataclass
class EvalReport:
    msve_uniform: float
    msve_mu: float
    leakage_score: float
    leakage_region: str
    errors: ValueGrid
    region_scores: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def rows(self):
        out = [("msve_uniform", self.msve_uniform), ("msve_mu", self.msve_mu),
               ("leakage_score", self.leakage_score), ("leakage_region", self.leakage_region)]
        out += [(f"leakage_{k}", v) for k, v in sorted(self.region_scores.items())]
        return out


def evaluate(pred: ValueGrid, truth: ValueGrid, layout: MapLayout,
             dataset: TrajectoryDataset | None = None, region_name: str | None = None,
             metadata: dict | None = None) -> EvalReport:
    errs = error_grid(pred, truth)
    scores = {name: leakage_score(errs, r) for name, r in layout.regions.items()
              if region_mask(errs, r).any()}
    if region_name is None:
        region_name = default_leakage_region(layout)
    lk = scores.get(region_name, math.nan)
    mu = msve(pred, truth, "visitation", dataset) if dataset is not None else math.nan
    return EvalReport(msve(pred, truth), mu, lk, region_name or "", errs, scores, dict(metadata or {}))


def default_leakage_region(layout: MapLayout) -> str | None:
    """Region whose true value is zero: map2's rewardless room, map3's padding chamber."""
    for name in ("upper", "padding"):
        if name in layout.regions:
            return name
    return None


# ---------------------------------------------------------------- files

def grid_to_csv(grid: ValueGrid) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["map_id", "cell_size", "n_cols", "n_rows"])
    w.writerow([grid.map_id, repr(float(grid.cell_size)), grid.n_cols, grid.n_rows])
    w.writerow(["col", "row", "cx", "cy", "free", "value", "stderr"])
    centers = grid.centers
    for j in range(grid.n_rows):
        for i in range(grid.n_cols):
            se = "" if grid.stderr is None else repr(float(grid.stderr[j, i]))
            w.writerow([i, j, repr(float(centers[j, i, 0])), repr(float(centers[j, i, 1])),
                        int(grid.free[j, i]), repr(float(grid.values[j, i])), se])
    return buf.getvalue()


def grid_from_csv(text: str) -> ValueGrid:
    rows = list(csv.reader(io.StringIO(text)))
    map_id, cell, n_cols, n_rows = rows[1][0], float(rows[1][1]), int(rows[1][2]), int(rows[1][3])
    free = np.zeros((n_rows, n_cols), bool)
    values = np.full((n_rows, n_cols), np.nan)
    stderr = np.full((n_rows, n_cols), np.nan)
    has_se = False
    for r in rows[3:]:
        i, j = int(r[0]), int(r[1])
        free[j, i] = r[4] == "1"
        values[j, i] = float(r[5])
        if r[6] != "":
            has_se = True
            stderr[j, i] = float(r[6])
    return ValueGrid(map_id, cell, n_cols, n_rows, free, values, stderr if has_se else None)


def save_grid(grid: ValueGrid, path) -> None:
    with open(path, "w") as fh:
        fh.write(grid_to_csv(grid))


def load_grid(path) -> ValueGrid:
    with open(path) as fh:
        return grid_from_csv(fh.read())


def grid_to_pgm(grid: ValueGrid, vmin: float | None = None, vmax: float | None = None):
    """ASCII PGM (P2); free cells map linearly onto 1..255, other cells are 0.

    Returns (pgm text, vmin, vmax).
    """
    vals = grid.values[grid.free]
    vmin = float(np.min(vals)) if vmin is None and vals.size else (vmin or 0.0)
    vmax = float(np.max(vals)) if vmax is None and vals.size else (vmax or 0.0)
    img = np.zeros((grid.n_rows, grid.n_cols), dtype=np.int64)
    if vmax > vmin:
        scaled = 1 + np.rint((np.clip(grid.values, vmin, vmax) - vmin) / (vmax - vmin) * 254)
    else:
        scaled = np.full(grid.values.shape, 128.0)
    img[grid.free] = scaled[grid.free].astype(np.int64)
    lines = ["P2", f"# {grid.map_id} cell_size={grid.cell_size!r}", f"{grid.n_cols} {grid.n_rows}", "255"]
    lines += [" ".join(str(v) for v in row) for row in img]
    return "\n".join(lines) + "\n", vmin, vmax


def render_grid(grid: ValueGrid, prefix) -> tuple[str, str, str]:
    """Write ``prefix.pgm``, ``prefix.range.txt`` (colorbar range) and ``prefix.csv``."""
    prefix = str(prefix)
    pgm, vmin, vmax = grid_to_pgm(grid)
    paths = (prefix + ".pgm", prefix + ".range.txt", prefix + ".csv")
    with open(paths[0], "w") as fh:
        fh.write(pgm)
    with open(paths[1], "w") as fh:
        fh.write(f"vmin={vmin!r}\nvmax={vmax!r}\nsentinel=0\n")
    save_grid(grid, paths[2])
    return paths


def parse_pgm(text: str) -> np.ndarray:
    tokens = [t for line in text.splitlines() if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    data = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    if data.size != w * h or data.max(initial=0) > maxval:
        raise ValueError("malformed PGM body")
    return data.reshape(h, w)
