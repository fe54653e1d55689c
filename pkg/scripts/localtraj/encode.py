"""Codebooks, local and global Bag-of-Words histograms, and codebook pool selection."""

import concurrent.futures
import logging
import struct
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from .classify import TrainConfig, true_class_posteriors, train
from .descriptors import KIND_TAGS, TAG_KINDS
from .exceptions import (
    ArchiveFormatError,
    DegenerateLabelsError,
    InsufficientDataError,
    ParameterError,
    TruncatedFileError,
)
from .localize import REJECTED
from .utils import atomic_write, derive_rng

log = logging.getLogger(__name__)

GLOBAL = -1
CODEBOOK_MAGIC = b"TLCB"
CODEBOOK_VERSION = 1


@dataclass
class EncodeConfig:
    """Bag-of-Words settings.

    Attributes:
        K: Words per (joint, kind) codebook.
        max_iterations: Lloyd iteration cap.
        tolerance: Stop once no centroid moves further than this.
        global_bow: One codebook per kind shared by all trajectories.
        use_rejected: With global_bow, also encode trajectories no joint accepted.
    """

    K: int = 128
    max_iterations: int = 100
    tolerance: float = 1e-6
    global_bow: bool = False
    use_rejected: bool = False

    def __post_init__(self):
        if self.K < 1 or self.max_iterations < 1 or self.tolerance < 0:
            raise ParameterError(f"Bad encode config: {self}")


@dataclass
class SelectionConfig:
    """Codebook pool selection by classifier confidence and ambiguity.

    Attributes:
        enabled: Run the selection before codebook learning.
        sample_size: Trajectories drawn per video for the codebook pool.
        candidates: Random pools compared.
        holdout_fraction: Share of training videos per class left out of the pool.
        lam: Ambiguity weight; None means 1 / holdout size.
        seed: Seed of the candidate draws; None means the pipeline seed.
    """

    enabled: bool = False
    sample_size: int = 2000
    candidates: int = 5
    holdout_fraction: float = 0.3
    lam: Optional[float] = None
    seed: Optional[int] = None

    def __post_init__(self):
        if self.sample_size < 1:
            raise ParameterError(f"sample_size must be >= 1, got {self.sample_size}")
        if not 0 < self.holdout_fraction < 1:
            raise ParameterError(f"holdout_fraction must be in (0, 1), got {self.holdout_fraction}")
        if self.candidates < 0:
            raise ParameterError(f"candidates must be non-negative, got {self.candidates}")


@dataclass(frozen=True, eq=False)
class Codebook:
    kind: str
    joint_id: int
    words: np.ndarray
    sse_history: Tuple[float, ...] = ()

    @property
    def K(self) -> int:
        return self.words.shape[0]

    @property
    def dim(self) -> int:
        return self.words.shape[1]


@dataclass(eq=False)
class FeatureHistogram:
    """Concatenated histogram with its (joint, kind, words) segment layout.

    Its length is the sum of the codebook sizes: J times the summed K of the
    kinds when every pool filled its codebook, less when a pool was smaller.
    """

    layout: List[Tuple[int, str, int]]
    values: np.ndarray

    def segments(self):
        start = 0
        for joint_id, kind, words in self.layout:
            yield (joint_id, kind), self.values[start : start + words]
            start += words


# k-means


def _plus_plus(features: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(features)
    chosen = [int(rng.integers(n))]
    nearest = cdist(features, features[chosen], "sqeuclidean")[:, 0]
    for _ in range(1, K):
        total = nearest.sum()
        if total > 0:
            pick = int(rng.choice(n, p=nearest / total))
        else:
            pick = int(rng.integers(n))
        chosen.append(pick)
        nearest = np.minimum(nearest, cdist(features, features[[pick]], "sqeuclidean")[:, 0])
    return features[chosen].copy()


def kmeans(
    features: np.ndarray,
    K: int,
    seed: int,
    max_iterations: int = 100,
    tolerance: float = 1e-6,
    kind: str = "",
    joint_id: int = GLOBAL,
) -> Codebook:
    """Lloyd iterations from a seeded k-means++ start.

    An empty cluster takes the point farthest from its centroid. The within
    cluster SSE of every assignment step is kept in sse_history.
    """
    features = np.asarray(features, dtype=float)
    if features.ndim != 2:
        raise ParameterError(f"Features must be a 2D matrix, got shape {features.shape}")
    if K < 1 or len(features) < K:
        raise InsufficientDataError(f"Need at least K={K} features, got {len(features)}")
    rng = derive_rng(seed)
    centroids = _plus_plus(features, K, rng)
    history = []
    for _ in range(max_iterations):
        distances = cdist(features, centroids, "sqeuclidean")
        labels = np.argmin(distances, axis=1)
        nearest = distances[np.arange(len(features)), labels]
        history.append(float(nearest.sum()))
        updated = centroids.copy()
        for k in range(K):
            members = labels == k
            if members.any():
                updated[k] = features[members].mean(axis=0)
            else:
                far = int(np.argmax(nearest))
                updated[k] = features[far]
                nearest[far] = 0.0
        moved = np.max(np.linalg.norm(updated - centroids, axis=1))
        centroids = updated
        if moved < tolerance:
            break
    return Codebook(kind, joint_id, centroids, tuple(history))


def quantize(features: np.ndarray, words: np.ndarray) -> np.ndarray:
    """Nearest word per row, ties to the lowest word index."""
    if not len(features):
        return np.zeros(0, dtype=int)
    return np.argmin(cdist(features, words), axis=1)


def _learn(task) -> Codebook:
    """k-means with K capped by the pool size; an empty pool gets one all-zero word."""
    kind, joint_id, pool, K, seed, cfg = task
    if not len(pool):
        return Codebook(kind, joint_id, np.zeros((1, pool.shape[1])))
    words = min(K, len(pool))
    return kmeans(pool, words, seed, cfg.max_iterations, cfg.tolerance, kind, joint_id)


def codebook_seed(seed: int, kind: str, joint_id: int) -> int:
    return int(derive_rng(seed, KIND_TAGS[kind], joint_id).integers(2 ** 31))


def learn_codebooks(
    videos: Sequence,
    kinds: Sequence[str],
    cfg: EncodeConfig,
    seed: int,
    subsets: Optional[Sequence[np.ndarray]] = None,
    jobs: int = 1,
) -> Dict[Tuple[str, int], Codebook]:
    """One codebook per (kind, joint), or per kind with cfg.global_bow.

    subsets[i] lists the trajectory rows of videos[i] that join the pool; all
    rows otherwise. Results are keyed and ordered by joint id, then kind.
    """
    joint_ids = sorted({int(j) for v in videos for j in v.joint_ids})
    pools = {}
    for kind in kinds:
        rows = []
        owners = []
        for index, video in enumerate(videos):
            picked = np.arange(video.count) if subsets is None else np.asarray(subsets[index], dtype=int)
            assignment = video.assignment[picked]
            keep = np.ones(len(picked), dtype=bool)
            if not (cfg.global_bow and cfg.use_rejected):
                keep = assignment != REJECTED
            rows.append(video.descriptors[kind][picked[keep]])
            owners.append(assignment[keep])
        dim = videos[0].descriptors[kind].shape[1] if videos else 0
        rows = np.concatenate(rows) if rows else np.zeros((0, dim))
        owners = np.concatenate(owners) if owners else np.zeros(0, dtype=int)
        if cfg.global_bow:
            pools[(kind, GLOBAL)] = rows
        else:
            for joint_id in joint_ids:
                pools[(kind, joint_id)] = rows[owners == joint_id]
    order = sorted(pools, key=lambda key: (key[1], KIND_TAGS[key[0]]))
    tasks = [(kind, j, pools[(kind, j)], cfg.K, codebook_seed(seed, kind, j), cfg) for kind, j in order]
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            books = list(executor.map(_learn, tasks))
    else:
        books = [_learn(task) for task in tasks]
    log.info(f"Learned {len(books)} codebooks from {len(videos)} videos")
    return {(b.kind, b.joint_id): b for b in books}


# histograms


def _histogram(
    descriptors: Dict[str, np.ndarray],
    owners: np.ndarray,
    codebooks: Dict[Tuple[str, int], Codebook],
    joint_ids: Sequence[int],
    kinds: Sequence[str],
) -> FeatureHistogram:
    layout = []
    values = []
    for joint_id in joint_ids:
        for kind in kinds:
            book = codebooks.get((kind, joint_id))
            if book is None:
                raise ParameterError(f"No codebook for kind {kind} and joint {joint_id}")
            rows = descriptors[kind][owners == joint_id]
            counts = np.bincount(quantize(rows, book.words), minlength=book.K).astype(float)
            total = counts.sum()
            values.append(counts / total if total > 0 else counts)
            layout.append((joint_id, kind, book.K))
    return FeatureHistogram(layout, np.concatenate(values) if values else np.zeros(0))


def layout_of(codebooks: Dict[Tuple[str, int], Codebook]) -> Tuple[List[int], List[str]]:
    joint_ids = sorted({j for _, j in codebooks})
    kinds = sorted({k for k, _ in codebooks}, key=KIND_TAGS.get)
    return joint_ids, kinds


def encode_local(
    descriptors: Dict[str, np.ndarray],
    assignment: np.ndarray,
    codebooks: Dict[Tuple[str, int], Codebook],
) -> FeatureHistogram:
    """Per-joint, per-kind word histograms concatenated by joint id, then kind order.

    Rejected trajectories add nothing; a trajectory assigned to a joint without
    codebooks is a configuration error.
    """
    joint_ids, kinds = layout_of(codebooks)
    assignment = np.asarray(assignment)
    stray = set(np.unique(assignment[assignment != REJECTED]).tolist()) - set(joint_ids)
    if stray:
        raise ParameterError(f"No codebooks for assigned joints {sorted(stray)}")
    return _histogram(descriptors, assignment, codebooks, joint_ids, kinds)


def encode_global(
    descriptors: Dict[str, np.ndarray],
    codebooks: Dict[Tuple[str, int], Codebook],
    assignment: Optional[np.ndarray] = None,
) -> FeatureHistogram:
    """One segment per kind; with an assignment, rejected trajectories are left out."""
    kinds = sorted({k for k, j in codebooks if j == GLOBAL}, key=KIND_TAGS.get)
    count = len(next(iter(descriptors.values()))) if descriptors else 0
    owners = np.full(count, GLOBAL)
    if assignment is not None:
        owners[np.asarray(assignment) == REJECTED] = GLOBAL - 1
    return _histogram(descriptors, owners, codebooks, [GLOBAL], kinds)


def encode_video(video, codebooks: Dict[Tuple[str, int], Codebook], cfg: EncodeConfig) -> np.ndarray:
    if cfg.global_bow:
        assignment = None if cfg.use_rejected else video.assignment
        return encode_global(video.descriptors, codebooks, assignment).values
    return encode_local(video.descriptors, video.assignment, codebooks).values


# codebook files


def write_codebooks(path: str, codebooks: Dict[Tuple[str, int], Codebook]):
    with atomic_write(path) as f:
        f.write(CODEBOOK_MAGIC + struct.pack("<II", CODEBOOK_VERSION, len(codebooks)))
        for (kind, joint_id), book in codebooks.items():
            f.write(struct.pack("<BiII", KIND_TAGS[kind], joint_id, book.K, book.dim))
            f.write(np.asarray(book.words, dtype="<f4").tobytes())


def read_codebooks(path: str) -> Dict[Tuple[str, int], Codebook]:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != CODEBOOK_MAGIC:
        raise ArchiveFormatError(f"{path}: not a codebook file")
    if len(data) < 12:
        raise TruncatedFileError(f"{path}: truncated header")
    version, count = struct.unpack_from("<II", data, 4)
    if version != CODEBOOK_VERSION:
        raise ArchiveFormatError(f"{path}: unsupported codebook version {version}")
    offset = 12
    codebooks = {}
    for _ in range(count):
        if len(data) < offset + 13:
            raise TruncatedFileError(f"{path}: truncated entry header")
        tag, joint_id, K, dim = struct.unpack_from("<BiII", data, offset)
        offset += 13
        size = 4 * K * dim
        if len(data) < offset + size:
            raise TruncatedFileError(f"{path}: truncated words")
        words = np.frombuffer(data, dtype="<f4", count=K * dim, offset=offset).reshape(K, dim)
        offset += size
        kind = TAG_KINDS.get(tag)
        if kind is None:
            raise ArchiveFormatError(f"{path}: unknown kind tag {tag}")
        codebooks[(kind, joint_id)] = Codebook(kind, joint_id, words.astype(np.float64))
    return codebooks


# pool selection


def confidence(posteriors: Sequence[float]) -> float:
    """Median log-posterior of the true labels over the pool videos."""
    p = np.asarray(posteriors, dtype=float)
    if not len(p):
        raise InsufficientDataError("Confidence needs at least one posterior")
    if np.any(p <= 0) or np.any(p > 1):
        raise ParameterError("Posteriors must lie in (0, 1]")
    return float(np.median(np.log(p)))


def ambiguity(posteriors: Sequence[float]) -> float:
    """Summed log-posterior of the true labels over the holdout; 0 when empty."""
    p = np.asarray(posteriors, dtype=float)
    if np.any(p <= 0) or np.any(p > 1):
        raise ParameterError("Posteriors must lie in (0, 1]")
    return float(np.sum(np.log(p))) if len(p) else 0.0


@dataclass
class Candidate:
    index: int
    train_videos: List[int]
    holdout_videos: List[int]
    subsets: List[np.ndarray]
    confidence: float = float("-inf")
    ambiguity: float = float("-inf")
    score: float = float("-inf")


@dataclass
class SelectionResult:
    chosen: int
    candidates: List[Candidate] = field(default_factory=list)

    @property
    def best(self) -> Candidate:
        return self.candidates[self.chosen]


def _split(labels: Sequence[str], fraction: float, rng: np.random.Generator):
    """Per-class split that keeps at least one video of every class in the pool."""
    train_videos, holdout = [], []
    for label in sorted(set(labels)):
        members = [i for i, other in enumerate(labels) if other == label]
        members = list(rng.permutation(members))
        held = min(int(round(fraction * len(members))), len(members) - 1)
        holdout.extend(int(i) for i in members[:held])
        train_videos.extend(int(i) for i in members[held:])
    return sorted(train_videos), sorted(holdout)


def draw_candidate(index: int, videos: Sequence, labels: Sequence[str], cfg: SelectionConfig, seed: int) -> Candidate:
    rng = derive_rng(seed, 4, index)
    train_videos, holdout = _split(labels, cfg.holdout_fraction, rng)
    subsets = []
    for i in train_videos:
        count = videos[i].count
        picked = rng.choice(count, min(cfg.sample_size, count), replace=False) if count else np.zeros(0, dtype=int)
        subsets.append(np.sort(picked).astype(int))
    return Candidate(index, train_videos, holdout, subsets)


def score_candidate(confidence_value: float, ambiguity_value: float, holdout: int, lam: Optional[float]) -> float:
    """C + lambda * A, both log-probabilities, larger is better."""
    if lam is None:
        lam = 1.0 / holdout if holdout else 0.0
    return confidence_value + lam * ambiguity_value


def _evaluate(task) -> Candidate:
    candidate, videos, labels, kinds, encode_cfg, train_cfg, cfg, seed = task
    pool = [videos[i] for i in candidate.train_videos]
    books = learn_codebooks(pool, kinds, encode_cfg, seed, candidate.subsets)
    histograms = np.array([encode_video(v, books, encode_cfg) for v in videos])
    train_labels = [labels[i] for i in candidate.train_videos]
    try:
        model = train(histograms[candidate.train_videos], train_labels, train_cfg, seed)
    except DegenerateLabelsError as e:
        log.error(f"Candidate {candidate.index} skipped: {e}")
        return candidate
    tiny = np.finfo(float).tiny
    inside = np.clip(true_class_posteriors(model, histograms[candidate.train_videos], train_labels), tiny, 1)
    held_labels = [labels[i] for i in candidate.holdout_videos]
    outside = np.clip(true_class_posteriors(model, histograms[candidate.holdout_videos], held_labels), tiny, 1)
    candidate.confidence = confidence(inside)
    candidate.ambiguity = ambiguity(outside)
    candidate.score = score_candidate(candidate.confidence, candidate.ambiguity, len(outside), cfg.lam)
    return candidate


def select_codebook_pool(
    videos: Sequence,
    labels: Sequence[str],
    kinds: Sequence[str],
    cfg: SelectionConfig,
    encode_cfg: EncodeConfig,
    train_cfg: TrainConfig,
    seed: int,
    jobs: int = 1,
) -> SelectionResult:
    """Compare cfg.candidates random pools and keep the one with the best C + lambda * A.

    Each candidate splits the training videos into a pool and a holdout, samples
    up to sample_size trajectories per pool video, learns codebooks from them,
    trains on the pool and scores the calibrated true-class posteriors. Ties go to
    the lower candidate index.
    """
    if cfg.candidates < 1:
        raise ParameterError("Codebook pool selection needs at least one candidate")
    if len(videos) < 2:
        raise InsufficientDataError("Codebook pool selection needs at least two training videos")
    seed = seed if cfg.seed is None else cfg.seed
    candidates = [draw_candidate(i, videos, labels, cfg, seed) for i in range(cfg.candidates)]
    tasks = [(c, videos, labels, kinds, encode_cfg, train_cfg, cfg, seed) for c in candidates]
    if jobs > 1 and len(tasks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as executor:
            evaluated = list(executor.map(_evaluate, tasks))
    else:
        evaluated = [_evaluate(task) for task in tasks]
    scores = np.array([c.score for c in evaluated])
    chosen = int(np.argmax(scores))
    for c in evaluated:
        log.info(f"Candidate {c.index}: C={c.confidence:.4f} A={c.ambiguity:.4f} score={c.score:.4f}")
    return SelectionResult(chosen, evaluated)
