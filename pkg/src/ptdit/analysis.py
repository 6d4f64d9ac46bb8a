"""Attention cost model, instrumented counting, memory estimate, redundancy profiler.

Counting convention: the headline number counts multiply-accumulates of the
two attention products (QK^T and AV), so global self-attention costs 2*N^2*D.
FLOPs are twice that. Softmax and normalization are excluded.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import CompressionRatio, ConfigError
from .model import ModelConfig, count_parameters
from .numerics import count_flops

COMPONENTS = ("giim_sa", "giim_cs", "tcm_wsa", "tcm_swsa")

# published ratio_vs_global values, keyed by (N, ratio)
REPORTED_RATIOS = {
    (256, (1, 2, 2)): 0.343,
    (1024, (1, 4, 4)): 0.097,
    (4096, (1, 8, 8)): 0.047,
    (16384, (1, 16, 16)): 0.023,
}
RECONCILE_TOLERANCE = 0.001  # 0.1 percentage point


def attention_flops_global(n: int, d: int) -> int:
    """Cost of global self-attention over n tokens of width d: 2 * n^2 * d."""
    if n < 1 or d < 1:
        raise ValueError("n and d must be >= 1")
    return 2 * n * n * d


@dataclass
class FlopsReport:
    giim_sa: int
    giim_cs: int
    tcm_wsa: int
    tcm_swsa: int
    baseline_sa: int
    n: int
    d: int
    ratio: tuple[int, int, int]
    source: str = "closed_form"
    extra: dict = field(default_factory=dict)

    @property
    def total(self) -> int:
        return self.giim_sa + self.giim_cs + self.tcm_wsa + self.tcm_swsa

    @property
    def ratio_vs_global(self) -> float:
        return self.total / self.baseline_sa

    @property
    def reported_value(self) -> float | None:
        return REPORTED_RATIOS.get((self.n, tuple(self.ratio)))

    @property
    def reconciled(self) -> bool | None:
        if self.reported_value is None:
            return None
        return abs(self.ratio_vs_global - self.reported_value) <= RECONCILE_TOLERANCE

    def row(self) -> dict:
        pv = self.reported_value
        return {
            "N": self.n,
            "D": self.d,
            "ratio": "x".join(map(str, self.ratio)),
            "giim_sa_macs": self.giim_sa,
            "giim_cs_macs": self.giim_cs,
            "tcm_wsa_macs": self.tcm_wsa,
            "tcm_swsa_macs": self.tcm_swsa,
            "ptdit_macs": self.total,
            "global_macs": self.baseline_sa,
            "ptdit_flops": 2 * self.total,
            "global_flops": 2 * self.baseline_sa,
            "ratio_vs_global_pct": round(100 * self.ratio_vs_global, 4),
            "reported_pct": "" if pv is None else round(100 * pv, 1),
            "status": "UNRECONCILED" if pv is not None and not self.reconciled else "ok",
        }


def ptdit_attention_flops(n: int, d: int, ratio: CompressionRatio | tuple) -> FlopsReport:
    """Closed-form attention cost of one PT-Block (GIIM + TCM) at sequence length n."""
    ratio = ratio if isinstance(ratio, CompressionRatio) else CompressionRatio(*ratio)
    p = ratio.volume
    if n % p:
        raise ConfigError(f"window volume {p} does not divide N={n}")
    m = n // p
    return FlopsReport(
        giim_sa=2 * m * m * d,
        giim_cs=2 * n * m * d,
        tcm_wsa=2 * m * p * p * d,
        tcm_swsa=2 * m * p * p * d,
        baseline_sa=attention_flops_global(n, d),
        n=n,
        d=d,
        ratio=ratio.as_tuple(),
    )


def closed_form_ratio(n: int, p: int) -> float:
    return 1.0 / p**2 + 1.0 / p + 2.0 * p / n


def instrumented_flop_count(run, n: int, d: int, ratio: CompressionRatio | tuple) -> FlopsReport:
    """Execute ``run()`` under the matmul counting hook and tally by component.

    ``n`` is the per-sample token count; counts are divided by the batch size
    the hook saw so the report is per sample, like the closed form. Projection,
    MLP and other products land in ``extra``.
    """
    ratio = ratio if isinstance(ratio, CompressionRatio) else CompressionRatio(*ratio)
    with count_flops() as counter:
        batch = run()
    batch = int(batch or 1)
    attn = counter.by_scope(kind="attention")
    per = {k: v // batch for k, v in attn.items()}
    extra = {
        "projection_macs": counter.macs(kind="proj") // batch,
        "mlp_macs": counter.macs(kind="mlp") // batch,
        "interp_macs": counter.macs(kind="interp") // batch,
        "cond_attention_macs": per.get("cond", 0),
        "global_attention_macs": per.get("global_sa", 0),
    }
    return FlopsReport(
        giim_sa=per.get("giim_sa", 0),
        giim_cs=per.get("giim_cs", 0),
        tcm_wsa=per.get("tcm_wsa", 0),
        tcm_swsa=per.get("tcm_swsa", 0),
        baseline_sa=attention_flops_global(n, d),
        n=n,
        d=d,
        ratio=ratio.as_tuple(),
        source="instrumented",
        extra=extra,
    )


# ---------------------------------------------------------------------------
# memory
# ---------------------------------------------------------------------------


@dataclass
class MemoryEstimate:
    parameter_bytes: int
    activation_bytes: int
    attention_map_bytes: int
    global_attention_map_bytes: int

    @property
    def total(self) -> int:
        return self.parameter_bytes + self.activation_bytes + self.attention_map_bytes


# stored [N, D] activations per block: norms, q/k/v/o of four attentions, residual sums
_ACTS_PER_BLOCK = 24


def memory_estimate(cfg: ModelConfig, n: int, batch: int, bytes_per_value: int = 4, n_cond: int | None = None) -> MemoryEstimate:
    """Training-time bytes: parameters + saved activations + attention maps.

    Attention-map terms per block and head: proxy self-attention (N/p)^2,
    injection N*N/p, window and shifted-window N*p each, conditioning N*L.
    The global reference keeps N^2 per block and head.
    """
    p = cfg.compression_ratio().volume
    d, h, layers = cfg.hidden_dim, cfg.heads, cfg.layers
    if n_cond is None:
        n_cond = 1 if cfg.conditioning == "class" else cfg.text_len
    params = count_parameters(cfg) * bytes_per_value
    m = n / p
    per_head = 0.0
    if cfg.giim_enabled:
        per_head += m * m + (n * m if cfg.injection == "cross_attention" else 0)
    if cfg.tcm_enabled:
        per_head += n * p * (2 if cfg.swsa_enabled else 1)
    per_head += n * n_cond
    maps = int(batch * layers * h * per_head * bytes_per_value)
    acts = int(batch * layers * (_ACTS_PER_BLOCK * n * d + cfg.mlp_ratio * 2 * n * d) * bytes_per_value)
    global_maps = int(batch * layers * h * n * n * bytes_per_value)
    return MemoryEstimate(params, acts, maps, global_maps)


# ---------------------------------------------------------------------------
# redundancy profiler
# ---------------------------------------------------------------------------


@dataclass
class RedundancyReport:
    grid: tuple[int, int]
    window: tuple[int, int]
    neighbor_radius: int
    neighbor_similarity: np.ndarray  # [windows_h, windows_w]
    distant_similarity: np.ndarray

    @property
    def mean_neighbor(self) -> float:
        return float(np.nanmean(self.neighbor_similarity)) if np.isfinite(self.neighbor_similarity).any() else float("nan")

    @property
    def mean_distant(self) -> float:
        return float(np.nanmean(self.distant_similarity)) if np.isfinite(self.distant_similarity).any() else float("nan")

    def to_dict(self) -> dict:
        return {
            "grid": list(self.grid),
            "window": list(self.window),
            "neighbor_radius": self.neighbor_radius,
            "mean_neighbor_similarity": self.mean_neighbor,
            "mean_distant_similarity": self.mean_distant,
            "neighbor_similarity": np.where(np.isfinite(self.neighbor_similarity), self.neighbor_similarity, None).tolist(),
            "distant_similarity": np.where(np.isfinite(self.distant_similarity), self.distant_similarity, None).tolist(),
        }


def _mean_pairwise_cosine(rows: np.ndarray) -> float:
    """Mean cosine similarity over unordered row pairs; NaN when no columns remain."""
    if rows.shape[1] == 0 or rows.shape[0] < 2:
        return float("nan")
    norms = np.linalg.norm(rows, axis=1)
    unit = rows / np.where(norms > 0, norms, 1.0)[:, None]
    sim = unit @ unit.T
    # two all-zero rows are identical
    zero = norms == 0
    sim[np.ix_(zero, zero)] = 1.0
    iu = np.triu_indices(rows.shape[0], k=1)
    return float(np.clip(sim[iu], -1.0, 1.0).mean())


def neighbor_mask(grid: tuple[int, int], window: tuple[int, int], wy: int, wx: int, radius: int) -> np.ndarray:
    """Boolean [H*W] mask of key positions within Chebyshev ``radius`` of window (wy, wx)."""
    gh, gw = grid
    ph, pw = window
    ys, xs = np.divmod(np.arange(gh * gw), gw)
    y0, y1 = wy * ph, wy * ph + ph - 1
    x0, x1 = wx * pw, wx * pw + pw - 1
    dy = np.maximum(np.maximum(y0 - ys, ys - y1), 0)
    dx = np.maximum(np.maximum(x0 - xs, xs - x1), 0)
    return np.maximum(dy, dx) <= radius


def redundancy_profile(maps, window: tuple[int, int], neighbor_radius: int | None = None, grid: tuple[int, int] | None = None) -> RedundancyReport:
    """Per-window similarity of attention rows, split into neighbor / distant columns.

    ``maps`` is an [N, N] array, or anything with leading axes (batch, heads)
    which are averaged away, or an AttentionMapCapture. Rows are queries.
    """
    weights = getattr(maps, "weights", maps)
    a = np.asarray(weights, dtype=np.float64)
    while a.ndim > 2:
        a = a.mean(axis=0)
    n_q, n_k = a.shape
    if n_q != n_k:
        raise ConfigError(f"attention map must be square, got {a.shape}")
    if grid is None:
        side = int(round(np.sqrt(n_k)))
        if side * side != n_k:
            raise ConfigError(f"{n_k} tokens do not form a square grid")
        grid = (side, side)
    gh, gw = grid
    ph, pw = window
    if gh * gw != n_k:
        raise ConfigError(f"grid {grid} does not hold {n_k} tokens")
    if gh % ph or gw % pw:
        raise ConfigError(f"window {window} does not divide grid {grid}")
    radius = max(ph, pw) if neighbor_radius is None else int(neighbor_radius)
    nh, nw = gh // ph, gw // pw
    neigh = np.full((nh, nw), np.nan)
    dist = np.full((nh, nw), np.nan)
    for wy, wx in itertools.product(range(nh), range(nw)):
        ys, xs = np.meshgrid(np.arange(wy * ph, wy * ph + ph), np.arange(wx * pw, wx * pw + pw), indexing="ij")
        rows = a[(ys * gw + xs).reshape(-1)]
        mask = neighbor_mask(grid, window, wy, wx, radius)
        neigh[wy, wx] = _mean_pairwise_cosine(rows[:, mask])
        dist[wy, wx] = _mean_pairwise_cosine(rows[:, ~mask])
    return RedundancyReport(grid, tuple(window), radius, neigh, dist)


# ---------------------------------------------------------------------------
# report serialization
# ---------------------------------------------------------------------------


def complexity_table(cells: list[tuple[int, tuple[int, int, int]]], d: int) -> tuple[list[dict], list[str]]:
    """Evaluate the closed form over (N, ratio) cells; bad cells become error markers."""
    rows, errors = [], []
    for n, ratio in cells:
        try:
            rows.append(ptdit_attention_flops(n, d, ratio).row())
        except (ConfigError, ValueError) as exc:
            errors.append(f"N={n} ratio={ratio}: {exc}")
            rows.append({"N": n, "D": d, "ratio": "x".join(map(str, ratio)), "status": f"ERROR: {exc}"})
    return rows, errors


def rows_to_tsv(rows: list[dict]) -> str:
    if not rows:
        return ""
    keys: list[str] = []
    for r in rows:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, delimiter="\t", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def report_json(obj) -> str:
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    elif hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    return json.dumps(obj, indent=2, sort_keys=True, default=float)
