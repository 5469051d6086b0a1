"""File formats, run configuration and posterior summary output.

Frames CSV layout: header ``d,p,id,x11,x12,...`` followed by one frame per
row, entries flattened row-major.  Run configuration is TOML with flat
tables (see :class:`RunConfig`).
"""

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .langevin import LangevinParams, column_marginal_log_density, sample_sequential
from .manifold import orthonormality_error, project, sample_haar
from .mixture import (
    cluster_count_histogram,
    coclustering_matrix,
    modal_cluster_count,
    predictive_log_density,
)
from .priors import (
    DiscreteKappa,
    GammaPrior,
    HaarLocation,
    PointMass,
    PriorSpec,
    TruncatedExponential,
    WeibullPrior,
)

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

REPROJECT_TOL = 1e-10
REJECT_TOL = 1e-3


class ParseError(ValueError):
    """Malformed CSV content; ``line`` is the 1-based line number."""

    def __init__(self, line, message):
        super().__init__(f"line {line}: {message}")
        self.line = line


class DataQualityError(ValueError):
    """Frames too far from orthonormal to repair; ``rows`` lists their lines."""

    def __init__(self, rows, worst):
        super().__init__(
            f"{len(rows)} frame(s) deviate from orthonormality by more than "
            f"{REJECT_TOL:g} (worst {worst:.3g}); lines {rows}"
        )
        self.rows = rows


@dataclass
class Dataset:
    """Frames of a common shape ``(n, d, p)`` with row identifiers."""

    frames: np.ndarray
    ids: list = field(default_factory=list)
    n_reprojected: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=float)
        if self.frames.ndim != 3:
            raise ValueError("frames must have shape (n, d, p)")
        if not self.ids:
            self.ids = [str(i + 1) for i in range(len(self.frames))]
        if len(self.ids) != len(self.frames):
            raise ValueError("one id per frame required")

    @property
    def n(self):
        return self.frames.shape[0]

    @property
    def d(self):
        return self.frames.shape[1]

    @property
    def p(self):
        return self.frames.shape[2]

    def __len__(self):
        return self.n


def _entry_names(d, p):
    if d < 10 and p < 10:
        return [f"x{i + 1}{j + 1}" for i in range(d) for j in range(p)]
    return [f"x{i + 1}_{j + 1}" for i in range(d) for j in range(p)]


def parse_frames_csv(path):
    """Read a frames CSV into a :class:`Dataset`.

    Frames whose orthonormality error exceeds 1e-10 but not 1e-3 are
    replaced by their polar projection; larger deviations raise
    :class:`DataQualityError` naming every offending line.
    """
    frames, ids, lines = [], [], []
    shape = None
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError(1, "empty file")
        if [h.strip() for h in header[:3]] != ["d", "p", "id"]:
            raise ParseError(1, "header must start with d,p,id")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            try:
                d, p = int(row[0]), int(row[1])
            except (ValueError, IndexError):
                raise ParseError(line, "d and p must be integers") from None
            if not 1 <= p <= d:
                raise ParseError(line, f"need 1 <= p <= d, got d={d}, p={p}")
            if shape is None:
                shape = (d, p)
            elif (d, p) != shape:
                raise ParseError(line, f"shape ({d},{p}) differs from {shape}")
            values = row[3:]
            if len(values) != d * p:
                raise ParseError(line, f"expected {d * p} entries, got {len(values)}")
            try:
                X = np.array([float(v) for v in values]).reshape(d, p)
            except ValueError:
                raise ParseError(line, "non-numeric entry") from None
            if not np.all(np.isfinite(X)):
                raise ParseError(line, "non-finite entry")
            frames.append(X)
            ids.append(row[2].strip() or str(len(frames)))
            lines.append(line)
    if not frames:
        raise ParseError(2, "no data rows")
    F = np.stack(frames)
    err = orthonormality_error(F)
    bad = err > REJECT_TOL
    if np.any(bad):
        raise DataQualityError([lines[i] for i in np.flatnonzero(bad)], float(err.max()))
    fix = err > REPROJECT_TOL
    if np.any(fix):
        F[fix] = project(F[fix])
    return Dataset(F, ids, int(fix.sum()))


def write_frames_csv(path, frames, ids=None):
    frames = np.asarray(frames, dtype=float)
    if frames.ndim == 2:
        frames = frames[None]
    n, d, p = frames.shape
    ids = ids if ids is not None else [str(i + 1) for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["d", "p", "id"] + _entry_names(d, p))
        for X, i in zip(frames, ids):
            w.writerow([d, p, i] + [repr(float(v)) for v in X.ravel()])


def _rz(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _rx(t):
    c, s = np.cos(t), np.sin(t)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def orbital_elements_to_frame(inclination, lon_ascending_node, arg_perihelion):
    """Orbit orientation as a point of V_{2,3}.

    Columns are the unit vector toward perihelion and the in-plane unit
    vector 90 degrees ahead of it, i.e. the first two columns of
    ``R_z(Omega) R_x(i) R_z(omega)``.  Angles in radians.
    """
    angles = (inclination, lon_ascending_node, arg_perihelion)
    if not all(np.isfinite(a) for a in angles):
        raise ValueError("angles must be finite")
    R = _rz(lon_ascending_node) @ _rx(inclination) @ _rz(arg_perihelion)
    return R[:, :2].copy()


def read_orbits_csv(path, degrees=True):
    """Read ``id,inclination,lon_ascending_node,arg_perihelion`` rows."""
    frames, ids = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"inclination", "lon_ascending_node", "arg_perihelion"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise ParseError(1, f"header must contain {sorted(need)}")
        for row in reader:
            try:
                ang = [float(row[k]) for k in ("inclination", "lon_ascending_node", "arg_perihelion")]
            except (TypeError, ValueError):
                raise ParseError(reader.line_num, "bad angle") from None
            if degrees:
                ang = np.radians(ang)
            frames.append(orbital_elements_to_frame(*ang))
            ids.append((row.get("id") or str(len(frames))).strip())
    return Dataset(np.stack(frames), ids)


def synthetic_neo(rng, n=162):
    """NEO-shaped stand-in data: ``n`` frames in V_{2,3} from four orbit families.

    Rows are grouped by family so the co-clustering matrix shows blocks.
    Returns ``(Dataset, labels)``.
    """
    # (weight, inclination, node, perihelion argument, kappa) per family;
    # orientations in degrees
    families = [
        (0.40, 6.0, 40.0, 300.0, (25.0, 12.0)),
        (0.30, 12.0, 200.0, 120.0, (20.0, 8.0)),
        (0.20, 25.0, 100.0, 30.0, (12.0, 6.0)),
        (0.10, 60.0, 300.0, 200.0, (6.0, 5.0)),
    ]
    w = np.array([f[0] for f in families])
    counts = np.floor(w * n).astype(int)
    counts[: n - counts.sum()] += 1
    frames, labels = [], []
    for k, (fam, m) in enumerate(zip(families, counts)):
        G = orbital_elements_to_frame(*np.radians(fam[1:4]))
        frames.append(sample_sequential(np.broadcast_to(G, (m, 3, 2)), np.array(fam[4]), rng))
        labels += [k] * m
    ids = [f"syn{i + 1:03d}" for i in range(n)]
    return Dataset(np.concatenate(frames), ids), np.array(labels)


# ---------------------------------------------------------------------------
# run configuration

KAPPA_PRIOR_FIELDS = {
    "truncated-exponential": ("rate", "lower"),
    "weibull": ("a", "b"),
    "gamma": ("shape", "rate"),
    "point": ("value",),
    "discrete": ("values",),
}


def build_kappa_prior(spec):
    """Kappa prior from a config table ``{type = ..., <params>}``.

    Parameters may be given by name or as a positional ``params`` list.
    """
    spec = dict(spec)
    kind = spec.pop("type", "truncated-exponential")
    if kind not in KAPPA_PRIOR_FIELDS:
        raise ValueError(f"unknown kappa prior {kind!r}; choose from {sorted(KAPPA_PRIOR_FIELDS)}")
    names = KAPPA_PRIOR_FIELDS[kind]
    if "params" in spec:
        params = spec.pop("params")
        if not isinstance(params, list):
            params = [params]
        for name, val in zip(names, params):
            spec.setdefault(name, val)
    unknown = set(spec) - set(names)
    if unknown:
        raise ValueError(f"unexpected keys for {kind}: {sorted(unknown)}")
    if kind == "truncated-exponential":
        return TruncatedExponential(**spec)
    if kind == "weibull":
        return WeibullPrior(**spec)
    if kind == "gamma":
        return GammaPrior(**spec)
    if kind == "point":
        return PointMass(spec["value"])
    return DiscreteKappa(spec["values"])


@dataclass
class RunConfig:
    """Everything needed to reproduce a fit.

    TOML layout (all keys optional except ``seed`` for ``fit``)::

        seed = 7
        iters = 6000
        burn_in = 1000
        thin = 1
        m_aux = 3
        step_g = 0.05
        step_kappa = 0.1
        out = "fit_out"
        variant = "location-scale"
        alpha = 1.0
        alpha_hyperprior = [1.0, 1.0]   # optional Gamma(shape, rate)
        proposal = "rotation"

        [kappa_prior]
        type = "truncated-exponential"
        rate = 0.1
        lower = 5.0
    """

    seed: int = None
    iters: int = 6000
    burn_in: int = 1000
    thin: int = 1
    m_aux: int = 3
    step_g: float = 0.05
    step_kappa: float = 0.1
    out: str = "fit_out"
    variant: str = "location-scale"
    alpha: float = 1.0
    alpha_hyperprior: list = None
    proposal: str = "rotation"
    kappa_prior: dict = field(default_factory=lambda: {
        "type": "truncated-exponential", "rate": 0.1, "lower": 5.0})

    def __post_init__(self):
        if not self.iters > self.burn_in >= 0:
            raise ValueError("need iters > burn_in >= 0")
        if self.thin < 1 or self.m_aux < 1:
            raise ValueError("thin and m_aux must be >= 1")
        self.prior()  # validates the prior settings

    @classmethod
    def from_dict(cls, table):
        table = dict(table)
        prior_tab = table.pop("prior", {})
        for key in ("alpha", "variant", "alpha_hyperprior", "proposal"):
            if key in prior_tab:
                table.setdefault(key, prior_tab.pop(key))
        if "kappa_prior" in prior_tab:
            table.setdefault("kappa_prior", prior_tab.pop("kappa_prior"))
        known = set(cls.__dataclass_fields__)
        unknown = set(table) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**table)

    @classmethod
    def from_toml(cls, path):
        with open(path, "rb") as fh:
            return cls.from_dict(tomllib.load(fh))

    def prior(self):
        hyper = tuple(self.alpha_hyperprior) if self.alpha_hyperprior else None
        return PriorSpec(
            alpha=float(self.alpha),
            kappa_prior=build_kappa_prior(self.kappa_prior),
            location_prior=HaarLocation(self.proposal),
            variant=self.variant,
            alpha_hyperprior=hyper,
        )

    def to_toml(self):
        """Flat TOML text of the full configuration (used as the run echo)."""
        d = asdict(self)
        kp = d.pop("kappa_prior")
        lines = [f"{k} = {_toml_value(v)}" for k, v in d.items() if v is not None]
        lines += ["", "[kappa_prior]"] + [f"{k} = {_toml_value(v)}" for k, v in kp.items()]
        return "\n".join(lines) + "\n"


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple, np.ndarray)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


# ---------------------------------------------------------------------------
# summaries


def write_matrix_csv(path, M, ids):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id"] + list(ids))
        for i, row in zip(ids, M):
            w.writerow([i] + [int(v) for v in row])


def read_matrix_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0][1:], np.array([[int(v) for v in r[1:]] for r in rows[1:]], dtype=np.int64)


def sphere_grid(d, n_lat=19, n_lon=36, rng=None, n_random=500):
    """Directions on S^{d-1}: a latitude/longitude grid for d=3, random otherwise."""
    if d == 3:
        lat = np.linspace(-np.pi / 2, np.pi / 2, n_lat)
        lon = np.linspace(-np.pi, np.pi, n_lon, endpoint=False)
        LA, LO = np.meshgrid(lat, lon, indexing="ij")
        return np.stack([np.cos(LA) * np.cos(LO), np.cos(LA) * np.sin(LO), np.sin(LA)],
                        axis=-1).reshape(-1, 3)
    rng = rng if rng is not None else np.random.default_rng(0)
    return sample_haar(d, 1, rng, size=n_random)[:, :, 0]


def predictive_column_marginal(Y, chain, prior, column, max_states=50, rng=None, cfg=None):
    """Log posterior-predictive density of one column on S^{d-1}.

    With a uniform location prior the new-cluster term has a uniform column
    marginal (log density 0).
    """
    if not isinstance(prior.location_prior, HaarLocation):
        raise TypeError("column marginals need the uniform location prior")
    Y = np.atleast_2d(Y)
    R = chain.n_retained
    idx = np.arange(R)
    if R > max_states:
        idx = np.unique(np.linspace(0, R - 1, max_states).round().astype(int))
    n = chain.n_obs
    terms = []
    for r in idx:
        alpha = float(chain.alpha[r])
        sizes = np.bincount(chain.assignments[r], minlength=len(chain.locations[r]))
        comp = [np.log(alpha / (n + alpha)) + np.zeros(len(Y))]
        for c, size in enumerate(sizes):
            par = LangevinParams(chain.locations[r][c], chain.kappas[r][c])
            comp.append(np.log(size / (n + alpha))
                        + column_marginal_log_density(Y, par, column, rng=rng, cfg=cfg))
        terms.append(np.logaddexp.reduce(np.stack(comp), axis=0))
    return np.logaddexp.reduce(np.stack(terms), axis=0) - np.log(len(idx))


def emit_summaries(chain, data, outdir, prior, seed=0, n_grid=500, min_sizes=(1, 5, 10),
                   max_states=50, cfg=None):
    """Write co-clustering, cluster counts, predictive grids and a text summary.

    Files: ``coclustering.csv``, ``cluster_counts.csv``,
    ``predictive_grid.csv``, ``summary.txt``.  Output is a deterministic
    function of the inputs and ``seed``.
    """
    if chain.n_retained < 1:
        raise ValueError("chain has no retained states")
    os.makedirs(outdir, exist_ok=True)
    if not os.access(outdir, os.W_OK):
        raise PermissionError(f"cannot write to {outdir}")
    frames = data.frames if isinstance(data, Dataset) else np.asarray(data)
    ids = data.ids if isinstance(data, Dataset) else [str(i + 1) for i in range(len(frames))]
    n, d, p = frames.shape
    rng = np.random.default_rng(seed)
    paths = {}

    C = coclustering_matrix(chain)
    paths["coclustering"] = os.path.join(outdir, "coclustering.csv")
    write_matrix_csv(paths["coclustering"], C, ids)

    paths["cluster_counts"] = os.path.join(outdir, "cluster_counts.csv")
    with open(paths["cluster_counts"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["min_size", "n_clusters", "frequency"])
        for m in min_sizes:
            for k, f in cluster_count_histogram(chain, m).items():
                w.writerow([m, k, f])

    paths["predictive_grid"] = os.path.join(outdir, "predictive_grid.csv")
    grid = sample_haar(d, p, rng, size=n_grid)
    lp = predictive_log_density(grid, chain, prior, rng=rng, max_states=max_states, cfg=cfg)
    with open(paths["predictive_grid"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "column", "index", "coords", "log_density"])
        for i, (X, v) in enumerate(zip(grid, lp)):
            w.writerow(["frame", "", i, " ".join(repr(float(x)) for x in X.ravel()), repr(float(v))])
        if isinstance(prior.location_prior, HaarLocation):
            Y = sphere_grid(d, rng=rng)
            for j in range(p):
                mj = predictive_column_marginal(Y, chain, prior, j, max_states, rng, cfg)
                for i, (y, v) in enumerate(zip(Y, mj)):
                    w.writerow(["marginal", j, i, " ".join(repr(float(x)) for x in y),
                                repr(float(v))])

    paths["summary"] = os.path.join(outdir, "summary.txt")
    last = np.sort(np.bincount(chain.assignments[-1]))[::-1]
    rates = chain.acceptance_rates()
    with open(paths["summary"], "w") as fh:
        fh.write(f"observations: {n}\n")
        fh.write(f"retained states: {chain.n_retained}\n")
        for m in min_sizes:
            fh.write(f"modal cluster count (min_size={m}): {modal_cluster_count(chain, m)}\n")
        fh.write("largest clusters in last state: " + " ".join(str(int(s)) for s in last[:10]) + "\n")
        for k, v in rates.items():
            fh.write(f"acceptance rate ({k}): {v:.4f}\n")
    return paths


def write_svg_heatmap(path, M, cell=4, title=None):
    """Grey-scale SVG of a nonnegative matrix (darker = larger)."""
    M = np.asarray(M, dtype=float)
    top = M.max() if M.size and M.max() > 0 else 1.0
    h, w = M.shape
    pad = 20 if title else 0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cell}" '
             f'height="{h * cell + pad}">']
    if title:
        parts.append(f'<text x="2" y="14" font-size="12">{title}</text>')
    for i in range(h):
        for j in range(w):
            g = int(round(255 * (1 - M[i, j] / top)))
            parts.append(f'<rect x="{j * cell}" y="{i * cell + pad}" width="{cell}" '
                         f'height="{cell}" fill="rgb({g},{g},{g})"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
