# License: BSD 2 clause
"""Greedy Gaussian segmentation of hand trajectories.

Each hand's box-center trajectory is split where its Gaussian statistics
change, by greedily maximizing the covariance-regularized log-likelihood

.. math::
    \\ell(X) = -\\frac{m}{2}\\left[\\log\\det\\left(S + \\frac{\\lambda}{m} I\\right)
               + n \\log 2\\pi + n\\right]

summed over segments. Per-hand breakpoints are then united into one
segmentation of the whole video and segments shorter than
``min_segment_s`` are absorbed by their neighbours.
"""
import math
from collections import defaultdict, namedtuple
from dataclasses import dataclass
from typing import Optional
from warnings import warn

import joblib
import numba
import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator
from sklearn.covariance import empirical_covariance
from sklearn.utils import check_array
from sklearn.utils.extmath import fast_logdet

from video2plan.ingest import DEFAULT_FPS, person_of
from video2plan.utils import ts

LOG_2PI = math.log(2.0 * math.pi)


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class SegmentationConfig:
    """Parameters of trajectory segmentation.

    ``boundary_merge_tol`` is in frames; ``None`` means ``fps / 6``.
    """

    lambda_reg: float = 1.0
    max_breakpoints: int = 20
    min_gain: float = 0.01
    min_segment_s: float = 1.0
    boundary_merge_tol: Optional[float] = None
    max_interp_gap_s: float = 0.5
    min_samples: int = 5
    use_velocity: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        for name in ("lambda_reg", "min_gain", "min_segment_s", "max_interp_gap_s"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and non-negative, got {value}")
        if self.lambda_reg <= 0:
            raise ValueError("lambda_reg must be positive")
        if self.max_breakpoints < 0:
            raise ValueError("max_breakpoints must be non-negative")
        if self.min_samples < 1:
            raise ValueError("min_samples must be at least 1")
        if self.boundary_merge_tol is not None and not (
            math.isfinite(self.boundary_merge_tol) and self.boundary_merge_tol >= 0
        ):
            raise ValueError("boundary_merge_tol must be finite and non-negative")

    def merge_tol(self, fps):
        if self.boundary_merge_tol is None:
            return fps / 6.0
        return float(self.boundary_merge_tol)


Segment = namedtuple("Segment", ["start_frame", "end_frame", "sources"])


class HandTrajectory(
    namedtuple("HandTrajectory", ["key", "frames", "centers", "gaps"])
):
    """Box-center samples of one hand.

    ``frames`` is an int array, ``centers`` an ``(m, 2)`` array and ``gaps`` a
    list of ``(start, end)`` frame ranges (end exclusive) where the hand was
    missing for longer than the interpolation limit.
    """

    __slots__ = ()

    def __len__(self):
        return len(self.frames)

    def chunks(self):
        """Split at the recorded gaps into gap-free trajectories."""
        if len(self.frames) == 0:
            return []
        cuts = np.flatnonzero(np.diff(self.frames) > 1) + 1
        pieces = []
        for frames, centers in zip(
            np.split(self.frames, cuts), np.split(self.centers, cuts)
        ):
            pieces.append(HandTrajectory(self.key, frames, centers, []))
        return pieces


def extract_trajectory(stream, hand, cfg=None):
    """Box-center trajectory of ``hand`` with short gaps interpolated.

    Parameters
    ----------
    stream: DetectionStream

    hand: str
        Hand key such as ``"LH_P1"``.

    cfg: SegmentationConfig (optional)

    Returns
    -------
    trajectory: HandTrajectory
    """
    cfg = cfg or SegmentationConfig()
    detected = []
    for frame in stream.frames:
        detection = frame.hand(hand)
        if detection is not None:
            detected.append((frame.frame_index, detection.box.center))
    if not detected:
        raise InsufficientSamplesError(f"hand {hand} never detected")
    if len(detected) < 2:
        raise InsufficientSamplesError(f"insufficient samples for hand {hand}")

    frames = np.array([f for f, _ in detected], dtype=np.int64)
    centers = np.array([c for _, c in detected], dtype=np.float64)
    max_missing = int(math.floor(cfg.max_interp_gap_s * stream.fps + 1e-9))

    gaps = []
    missing = np.diff(frames) - 1
    for i in np.flatnonzero(missing > max_missing):
        gaps.append((int(frames[i]) + 1, int(frames[i + 1])))

    grid = np.arange(frames[0], frames[-1] + 1)
    keep = np.ones(grid.shape[0], dtype=bool)
    for start, end in gaps:
        keep[start - frames[0] : end - frames[0]] = False
    grid = grid[keep]
    filled = np.column_stack(
        [np.interp(grid, frames, centers[:, 0]), np.interp(grid, frames, centers[:, 1])]
    )
    return HandTrajectory(hand, grid, filled, gaps)


def trajectory_features(traj, use_velocity=False):
    X = np.asarray(traj.centers, dtype=np.float64)
    if use_velocity and X.shape[0] > 1:
        X = np.hstack([X, np.gradient(X, axis=0)])
    return X


def segment_loglik(X, lambda_reg=1.0):
    """Covariance-regularized Gaussian log-likelihood of a sample block.

    Parameters
    ----------
    X: array of shape (m, n) or (m,)
        The samples; a 1-d array is a single feature.

    lambda_reg: float
        Regularization weight, strictly positive.

    Returns
    -------
    value: float
        ``-(m/2) [log det(S + (lambda/m) I) + n log 2 pi + n]`` with ``S`` the
        empirical covariance about the sample mean.
    """
    if lambda_reg <= 0:
        raise ValueError("lambda_reg must be positive")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, np.newaxis]
    X = check_array(X)
    m, n = X.shape
    if m == 1:
        S = np.zeros((n, n))
    else:
        S = empirical_covariance(X)
    sigma = S + (lambda_reg / m) * np.eye(n)
    return -0.5 * m * (fast_logdet(sigma) + n * LOG_2PI + n)


@numba.njit(cache=True)
def block_loglik(cum_x, cum_xx, start, end, lambda_reg):
    """segment_loglik of rows ``start:end`` from prefix sums."""
    m = end - start
    n = cum_x.shape[1]
    mu = (cum_x[end] - cum_x[start]) / m
    cov = (cum_xx[end] - cum_xx[start]) / m - np.outer(mu, mu)
    for i in range(n):
        cov[i, i] += lambda_reg / m
    sign, logdet = np.linalg.slogdet(cov)
    if sign <= 0.0:
        return -np.inf
    return -0.5 * m * (logdet + n * LOG_2PI + n)


@numba.njit(cache=True)
def best_split(cum_x, cum_xx, start, end, lambda_reg, min_size):
    """Best single split of ``start:end``; returns (position, total value)."""
    best_position = -1
    best_value = -np.inf
    for position in range(start + min_size, end - min_size + 1):
        value = block_loglik(cum_x, cum_xx, start, position, lambda_reg)
        value += block_loglik(cum_x, cum_xx, position, end, lambda_reg)
        if value > best_value:
            best_value = value
            best_position = position
    return best_position, best_value


def prefix_sums(X):
    m, n = X.shape
    cum_x = np.zeros((m + 1, n))
    cum_x[1:] = np.cumsum(X, axis=0)
    cum_xx = np.zeros((m + 1, n, n))
    cum_xx[1:] = np.cumsum(X[:, :, np.newaxis] * X[:, np.newaxis, :], axis=0)
    return cum_x, cum_xx


class GreedyGaussianSegmentation(BaseEstimator):
    """Greedy breakpoint search on a multivariate series.

    Starting from a single segment, repeatedly insert the split with the
    largest log-likelihood gain, then move every breakpoint to its best
    position between its neighbours until nothing improves. Stops when the
    gain relative to the current objective drops below ``min_gain`` or
    ``max_breakpoints`` is reached.

    Parameters
    ----------
    lambda_reg: float (optional, default 1.0)
        Covariance regularization weight.

    max_breakpoints: int (optional, default 20)
        Hard cap on interior breakpoints.

    min_gain: float (optional, default 0.01)
        Relative objective improvement needed to accept a new breakpoint.

    min_samples: int (optional, default 5)
        Minimum samples per segment.

    max_adjust_iter: int (optional, default 100)
        Bound on breakpoint adjustment sweeps after each insertion.

    verbose: bool (optional, default False)
        Print progress.

    Attributes
    ----------
    breakpoints_: list of int
        Sorted row positions where new segments start.

    objective_history_: list of float
        Total log-likelihood after each accepted insertion (and adjustment).
    """

    def __init__(
        self,
        lambda_reg=1.0,
        max_breakpoints=20,
        min_gain=0.01,
        min_samples=5,
        max_adjust_iter=100,
        verbose=False,
    ):
        self.lambda_reg = lambda_reg
        self.max_breakpoints = max_breakpoints
        self.min_gain = min_gain
        self.min_samples = min_samples
        self.max_adjust_iter = max_adjust_iter
        self.verbose = verbose

    def _objective(self, cum_x, cum_xx, bounds):
        return sum(
            block_loglik(cum_x, cum_xx, a, b, self.lambda_reg)
            for a, b in zip(bounds[:-1], bounds[1:])
        )

    def _adjust(self, cum_x, cum_xx, bounds):
        for _ in range(self.max_adjust_iter):
            moved = False
            for i in range(1, len(bounds) - 1):
                a, b, c = bounds[i - 1], bounds[i], bounds[i + 1]
                current = block_loglik(cum_x, cum_xx, a, b, self.lambda_reg)
                current += block_loglik(cum_x, cum_xx, b, c, self.lambda_reg)
                position, value = best_split(
                    cum_x, cum_xx, a, c, self.lambda_reg, self.min_samples
                )
                if position != b and value > current + 1e-10 * max(1.0, abs(current)):
                    bounds[i] = position
                    moved = True
            if not moved:
                break
        return bounds

    def fit(self, X, y=None):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, np.newaxis]
        X = check_array(X)
        X = X - X.mean(axis=0)
        m = X.shape[0]

        self.breakpoints_ = []
        cum_x, cum_xx = prefix_sums(X)
        bounds = [0, m]
        objective = self._objective(cum_x, cum_xx, bounds)
        self.objective_history_ = [objective]
        if m < 2 * self.min_samples:
            return self

        while len(bounds) - 2 < self.max_breakpoints:
            best_gain, best_position = -np.inf, -1
            for a, b in zip(bounds[:-1], bounds[1:]):
                if b - a < 2 * self.min_samples:
                    continue
                position, value = best_split(
                    cum_x, cum_xx, a, b, self.lambda_reg, self.min_samples
                )
                gain = value - block_loglik(cum_x, cum_xx, a, b, self.lambda_reg)
                if gain > best_gain:
                    best_gain, best_position = gain, position
            if best_position < 0 or best_gain <= 0.0:
                break
            if best_gain < self.min_gain * abs(objective):
                if self.verbose:
                    print(ts(), "Relative gain below threshold; stopping")
                break

            bounds = sorted(bounds + [best_position])
            bounds = self._adjust(cum_x, cum_xx, bounds)
            new_objective = self._objective(cum_x, cum_xx, bounds)
            assert new_objective >= objective - 1e-8 * max(1.0, abs(objective)), (
                "segmentation objective decreased"
            )
            objective = new_objective
            self.objective_history_.append(objective)
            if self.verbose:
                print(
                    ts(),
                    "Breakpoint",
                    len(bounds) - 2,
                    "at",
                    best_position,
                    "objective",
                    objective,
                )

        self.breakpoints_ = [int(b) for b in bounds[1:-1]]
        return self


def ggs_breakpoints(traj, cfg=None, verbose=False):
    """Breakpoint frames of one hand trajectory.

    Chunks separated by long gaps are segmented independently. Chunks with
    fewer than ``2 * cfg.min_samples`` samples yield no breakpoints.
    """
    cfg = cfg or SegmentationConfig()
    result = []
    for chunk in traj.chunks() if traj.gaps else [traj]:
        if len(chunk) < 2 * cfg.min_samples:
            continue
        model = GreedyGaussianSegmentation(
            lambda_reg=cfg.lambda_reg,
            max_breakpoints=cfg.max_breakpoints,
            min_gain=cfg.min_gain,
            min_samples=cfg.min_samples,
            verbose=verbose,
        ).fit(trajectory_features(chunk, cfg.use_velocity))
        result.extend(int(chunk.frames[p]) for p in model.breakpoints_)
    return sorted(result)


def hand_breakpoints(stream, hand, cfg=None):
    """Breakpoints of ``hand`` plus the start and end of each of its chunks."""
    cfg = cfg or SegmentationConfig()
    traj = extract_trajectory(stream, hand, cfg)
    result = set(ggs_breakpoints(traj, cfg))
    for chunk in traj.chunks():
        result.add(int(chunk.frames[0]))
        result.add(int(chunk.frames[-1]) + 1)
    return sorted(result)


def union_segments(per_hand, length, cfg=None, fps=DEFAULT_FPS):
    """Unite per-hand breakpoints into one segmentation of ``[0, length)``.

    Parameters
    ----------
    per_hand: dict
        Hand key -> iterable of breakpoint frames.

    length: int
        Number of frames covered.

    cfg: SegmentationConfig (optional)

    fps: float (optional, default 30.0)
        Frame rate, used for ``min_segment_s`` and the default merge tolerance.

    Returns
    -------
    segments: list of Segment
        Disjoint, ordered and covering ``[0, length)``.
    """
    cfg = cfg or SegmentationConfig()
    length = int(length)
    if length <= 0:
        return []

    sources = defaultdict(set)
    for hand, breakpoints in per_hand.items():
        for b in breakpoints:
            b = int(b)
            if not 0 <= b <= length:
                raise ValueError(f"breakpoint {b} of {hand} outside [0, {length}]")
            sources[b].add(hand)

    tol = cfg.merge_tol(fps)
    clusters = []
    for b in sorted(sources):
        if clusters and b - clusters[-1][-1] < tol:
            clusters[-1].append(b)
        else:
            clusters.append([b])

    boundaries = {0: set(), length: set()}
    for cluster in clusters:
        members = set().union(*(sources[b] for b in cluster))
        if cluster[0] - 0 < tol or 0 in cluster:
            frame = 0
        elif length - cluster[-1] < tol or length in cluster:
            frame = length
        else:
            frame = sum(cluster) // len(cluster)
        boundaries.setdefault(frame, set()).update(members)

    bounds = sorted(boundaries)
    min_length = cfg.min_segment_s * fps
    while len(bounds) > 2:
        lengths = np.diff(bounds)
        short = np.flatnonzero(lengths < min_length - 1e-9)
        if short.shape[0] == 0:
            break
        k = int(short[0])
        del bounds[1 if k == 0 else k]

    return [
        Segment(a, b, frozenset(boundaries[a] | boundaries[b]))
        for a, b in zip(bounds[:-1], bounds[1:])
    ]


def _segmentable_hands(stream, hands):
    usable = []
    for key in hands:
        count = sum(1 for frame in stream.frames if frame.hand(key) is not None)
        if count < 2:
            warn(f"Hand {key} has fewer than 2 detections and is not segmented")
        else:
            usable.append(key)
    return usable


def segment_stream(stream, cfg=None, hands=None):
    """Segment a whole stream: per-hand searches united into one sequence."""
    cfg = cfg or SegmentationConfig()
    if hands is None:
        hands = stream.hand_keys()
    keys = _segmentable_hands(stream, hands)
    results = joblib.Parallel(n_jobs=cfg.n_jobs, prefer="threads")(
        joblib.delayed(hand_breakpoints)(stream, key, cfg) for key in keys
    )
    return union_segments(dict(zip(keys, results)), stream.length, cfg, stream.fps)


def segment_by_person(stream, cfg=None):
    """Per-person mode: one union of the person's own hands each."""
    cfg = cfg or SegmentationConfig()
    by_person = defaultdict(list)
    for key in stream.hand_keys():
        by_person[person_of(key)].append(key)
    return {
        person: segment_stream(stream, cfg, hands=keys)
        for person, keys in sorted(by_person.items())
    }


def combine_person_segments(per_person, length):
    """One timeline cut at every boundary of every person's segmentation.

    Each piece lists the source hands of the person segments covering it.
    With a single person this is that person's segmentation unchanged.
    """
    length = int(length)
    if length <= 0:
        return []
    bounds = {0, length}
    for segments in per_person.values():
        for segment in segments:
            bounds.update((segment.start_frame, segment.end_frame))
    bounds = sorted(bounds)
    combined = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        sources = set()
        for segments in per_person.values():
            for segment in segments:
                if segment.start_frame <= a and b <= segment.end_frame:
                    sources |= segment.sources
        combined.append(Segment(a, b, frozenset(sources)))
    return combined


def save_segments(segments, path):
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for segment in segments:
            hands = ",".join(sorted(segment.sources)) or "-"
            handle.write(f"{segment.start_frame} {segment.end_frame} {hands}\n")


def load_segments(path):
    segments = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            fields = line.split()
            if not fields:
                continue
            if len(fields) != 3:
                raise ValueError(f"malformed segment at line {line_number}")
            try:
                start, end = int(fields[0]), int(fields[1])
            except ValueError:
                raise ValueError(f"malformed segment at line {line_number}")
            if start >= end or (segments and start < segments[-1].end_frame):
                raise ValueError(f"segments out of order at line {line_number}")
            hands = frozenset() if fields[2] == "-" else frozenset(fields[2].split(","))
            segments.append(Segment(start, end, hands))
    return segments


def timeline_frame(stream, segments):
    """Table of ``hand, frame, segment_id`` for every hand detection."""
    starts = np.array([s.start_frame for s in segments], dtype=np.int64)
    rows = []
    for key in stream.hand_keys():
        for frame in stream.frames:
            if frame.hand(key) is None or starts.shape[0] == 0:
                continue
            position = np.searchsorted(starts, frame.frame_index, side="right")
            segment_id = int(position) - 1
            rows.append((key, frame.frame_index, segment_id))
    return pd.DataFrame(rows, columns=["hand", "frame", "segment_id"])
