"""Transaction-log ingestion and the prefix-sample evaluation protocol.

The corpus is a simulated card-payment log: one CSV row per transaction with
a day counter (`step`), customer and merchant identifiers, coarse customer
age band and gender, merchant category, amount, and a fraud flag.  Rows are
grouped per customer (ordered by step, file order breaking ties) and every
prefix of length >= `min_prefix` becomes one sample: the continuous path
carries scaled step differences and amounts, the condition carries the age
band, gender, and a risk level derived from merchant-category fraud rates,
and the label is the fraud flag of the prefix's last transaction.

Splitting is class-stratified: one fixed 90/10 train/test split, then for
each repetition and each labeled-set size a stratified subset of the
training samples keeps its labels while the rest are hidden (never deleted;
evaluation still needs them).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = [
    "Transaction",
    "CustomerSeries",
    "SampleSet",
    "SplitResult",
    "TransactionParseError",
    "load_transactions",
    "group_customers",
    "make_samples",
    "training_maxima",
    "continuous_path",
    "category_rate_table",
    "rate_to_bucket",
    "risk_level",
    "stratified_split",
    "stratified_subset",
    "split_and_unlabel",
]

logger = logging.getLogger(__name__)

COLUMNS = (
    "step", "customer", "age", "gender", "zipcodeOri", "merchant",
    "zipMerchant", "category", "amount", "fraud",
)
VALID_GENDERS = frozenset({"M", "F"})

# Risk buckets over category fraud rates in percent: [0,2], (2,10], (10,30],
# (30,50], (50,100].
_BUCKET_EDGES = (2.0, 10.0, 30.0, 50.0)


class TransactionParseError(ValueError):
    """Malformed transaction row; carries the 1-based line number."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass(frozen=True)
class Transaction:
    step: int
    customer: str
    age: str
    gender: str
    merchant: str
    category: str
    amount: float
    fraud: int


def _clean(value: str) -> str:
    return value.strip().strip("'\"")


def load_transactions(path: str | Path) -> list[Transaction]:
    """Parse the transaction CSV into typed records.

    Accepts single- or double-quoted fields; raises TransactionParseError
    with the offending line number and column on malformed rows.
    """
    path = Path(path)
    out: list[Transaction] = []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TransactionParseError(1, "empty file") from None
        header = [_clean(h) for h in header]
        if tuple(header) != COLUMNS:
            raise TransactionParseError(
                1, f"unexpected header {header!r}, want {list(COLUMNS)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(COLUMNS):
                raise TransactionParseError(
                    lineno, f"expected {len(COLUMNS)} fields, got {len(row)}"
                )
            fields = [_clean(v) for v in row]
            try:
                step = int(fields[0])
            except ValueError:
                raise TransactionParseError(
                    lineno, f"non-integer 'step' value {fields[0]!r}"
                ) from None
            try:
                amount = float(fields[8])
            except ValueError:
                raise TransactionParseError(
                    lineno, f"non-numeric 'amount' value {fields[8]!r}"
                ) from None
            try:
                fraud = int(fields[9])
            except ValueError:
                raise TransactionParseError(
                    lineno, f"non-integer 'fraud' value {fields[9]!r}"
                ) from None
            if fraud not in (0, 1):
                raise TransactionParseError(lineno, f"'fraud' must be 0/1, got {fraud}")
            out.append(
                Transaction(
                    step=step, customer=fields[1], age=fields[2], gender=fields[3],
                    merchant=fields[5], category=fields[7], amount=amount, fraud=fraud,
                )
            )
    return out


@dataclass
class CustomerSeries:
    """All transactions of one customer, ordered by step (stable)."""

    customer: str
    steps: np.ndarray
    amounts: np.ndarray
    frauds: np.ndarray
    ages: list[str]
    genders: list[str]
    categories: list[str]
    step_diffs: np.ndarray = field(init=False)

    def __post_init__(self):
        diffs = np.zeros(len(self.steps), dtype=np.float64)
        if len(self.steps) > 1:
            diffs[1:] = np.diff(self.steps.astype(np.float64))
        self.step_diffs = diffs

    def __len__(self) -> int:
        return len(self.steps)


def group_customers(txns: list[Transaction]) -> tuple[list[CustomerSeries], int]:
    """Group transactions per customer and drop customers without a valid
    most-recent gender.

    Returns (kept series, number of customers excluded for missing gender).
    Within a customer, rows keep file order for equal steps.
    """
    by_customer: dict[str, list[Transaction]] = {}
    for t in txns:
        by_customer.setdefault(t.customer, []).append(t)
    kept: list[CustomerSeries] = []
    excluded = 0
    for cid, rows in by_customer.items():
        order = sorted(range(len(rows)), key=lambda i: rows[i].step)
        rows = [rows[i] for i in order]
        if rows[-1].gender not in VALID_GENDERS:
            excluded += 1
            continue
        kept.append(
            CustomerSeries(
                customer=cid,
                steps=np.asarray([r.step for r in rows], dtype=np.int64),
                amounts=np.asarray([r.amount for r in rows], dtype=np.float64),
                frauds=np.asarray([r.fraud for r in rows], dtype=np.int8),
                ages=[r.age for r in rows],
                genders=[r.gender for r in rows],
                categories=[r.category for r in rows],
            )
        )
    return kept, excluded


@dataclass
class SampleSet:
    """Flat arrays describing every prefix sample.

    Column `prefix_len` is the 1-based index of the label transaction within
    its customer's series; the sample's path covers transactions 1..prefix_len.
    """

    customers: list[CustomerSeries]
    customer_idx: np.ndarray
    prefix_len: np.ndarray
    labels: np.ndarray
    amounts: np.ndarray          # raw amount of the label transaction
    ages: list[str]              # age band at the label transaction
    genders: list[str]

    def __len__(self) -> int:
        return len(self.customer_idx)


def make_samples(customers: list[CustomerSeries], min_prefix: int = 5) -> SampleSet:
    """One sample per prefix of length >= min_prefix per customer."""
    cidx, plen, labels, amounts, ages, genders = [], [], [], [], [], []
    for ci, cs in enumerate(customers):
        for j in range(min_prefix, len(cs) + 1):
            cidx.append(ci)
            plen.append(j)
            labels.append(int(cs.frauds[j - 1]))
            amounts.append(float(cs.amounts[j - 1]))
            ages.append(cs.ages[j - 1])
            genders.append(cs.genders[j - 1])
    return SampleSet(
        customers=customers,
        customer_idx=np.asarray(cidx, dtype=np.intp),
        prefix_len=np.asarray(plen, dtype=np.intp),
        labels=np.asarray(labels, dtype=np.int8),
        amounts=np.asarray(amounts, dtype=np.float64),
        ages=ages,
        genders=genders,
    )


def training_maxima(samples: SampleSet, train_idx: np.ndarray) -> tuple[float, float]:
    """Largest step difference and amount over all transactions covered by
    training-split samples; frozen before any unlabeling repetition."""
    reach: dict[int, int] = {}
    for i in train_idx:
        ci = int(samples.customer_idx[i])
        reach[ci] = max(reach.get(ci, 0), int(samples.prefix_len[i]))
    max_sd, max_amt = 0.0, 0.0
    for ci, j in reach.items():
        cs = samples.customers[ci]
        max_sd = max(max_sd, float(cs.step_diffs[:j].max()))
        max_amt = max(max_amt, float(cs.amounts[:j].max()))
    return max_sd, max_amt


def continuous_path(
    cs: CustomerSeries, prefix_len: int, max_sd: float, max_amt: float
) -> np.ndarray:
    """(prefix_len, 2) path of scaled step differences and amounts.

    The first transaction of a prefix has step difference 0 by convention;
    maxima of 0 leave the channel unscaled.
    """
    sd = cs.step_diffs[:prefix_len]
    amt = cs.amounts[:prefix_len]
    if max_sd > 0:
        sd = sd / max_sd
    if max_amt > 0:
        amt = amt / max_amt
    return np.column_stack([sd, amt])


# ---------------------------------------------------------------------------
# Risk levels.  Category fraud rates come from the labeled training portion
# only: each labeled sample reveals the fraud flag of its label transaction,
# so the rate of a category is the fraud fraction of labeled label-
# transactions in that category, in percent.
# ---------------------------------------------------------------------------


def category_rate_table(samples: SampleSet, labeled_idx: np.ndarray) -> dict[str, float]:
    counts: dict[str, list[int]] = {}
    for i in labeled_idx:
        ci = int(samples.customer_idx[i])
        j = int(samples.prefix_len[i])
        cat = samples.customers[ci].categories[j - 1]
        entry = counts.setdefault(cat, [0, 0])
        entry[0] += int(samples.labels[i])
        entry[1] += 1
    return {cat: 100.0 * f / n for cat, (f, n) in counts.items()}


def rate_to_bucket(rate_percent: float) -> int:
    """Map a fraud rate in percent to risk bucket 1..5."""
    if not 0.0 <= rate_percent <= 100.0:
        raise ValueError(f"rate must be a percentage in [0, 100], got {rate_percent}")
    for bucket, edge in enumerate(_BUCKET_EDGES, start=1):
        if rate_percent <= edge:
            return bucket
    return 5


_warned_categories: set[str] = set()


def risk_level(
    cs: CustomerSeries, prefix_len: int, rate_table: dict[str, float]
) -> int:
    """Position-weighted average transaction risk of a prefix, rounded half
    up to a bucket.

    Transaction i (1-based) carries weight i; a category absent from the
    rate table falls back to bucket 1 with a one-time warning.
    """
    total, weight_sum = 0.0, 0.0
    for i in range(1, prefix_len + 1):
        cat = cs.categories[i - 1]
        if cat in rate_table:
            bucket = rate_to_bucket(rate_table[cat])
        else:
            bucket = 1
            if cat not in _warned_categories:
                _warned_categories.add(cat)
                logger.warning("category %r missing from rate table; assuming bucket 1", cat)
        total += i * bucket
        weight_sum += i
    return int(math.floor(total / weight_sum + 0.5))


def risk_levels(cs: CustomerSeries, rate_table: dict[str, float]) -> np.ndarray:
    """Risk level of every prefix of a customer at once.

    Equivalent to [risk_level(cs, j, table) for j in 1..n] but shares the
    per-transaction bucket lookups via cumulative sums.
    """
    n = len(cs)
    buckets = np.empty(n, dtype=np.float64)
    for i, cat in enumerate(cs.categories):
        if cat in rate_table:
            buckets[i] = rate_to_bucket(rate_table[cat])
        else:
            buckets[i] = 1
            if cat not in _warned_categories:
                _warned_categories.add(cat)
                logger.warning("category %r missing from rate table; assuming bucket 1", cat)
    weights = np.arange(1, n + 1, dtype=np.float64)
    avg = np.cumsum(weights * buckets) / np.cumsum(weights)
    return np.floor(avg + 0.5).astype(np.int64)


# ---------------------------------------------------------------------------
# Splits.
# ---------------------------------------------------------------------------


@dataclass
class SplitResult:
    """Index sets of the fixed train/test split and every labeled draw."""

    train_idx: np.ndarray
    test_idx: np.ndarray
    labeled: dict  # (labeled_size, repetition) -> sorted index array (into samples)


def stratified_split(
    labels: np.ndarray, test_fraction: float, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Class-stratified split; per class, round(test_fraction * count) rows
    go to the test side."""
    labels = np.asarray(labels)
    test_parts = []
    for cls in np.unique(labels):
        rows = np.flatnonzero(labels == cls)
        n_test = int(round(test_fraction * rows.size))
        test_parts.append(rng.permutation(rows)[:n_test])
    test_idx = np.sort(np.concatenate(test_parts))
    mask = np.ones(labels.size, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


def stratified_subset(
    labels: np.ndarray, pool: np.ndarray, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Stratified without-replacement draw of `size` rows from `pool`.

    The fraud share of the subset tracks the pool's share to within one
    sample; the fraud count is the ceiling of size * pool fraud proportion,
    which keeps at least one fraud in every non-degenerate draw.
    """
    pool = np.asarray(pool)
    if size > pool.size:
        raise ValueError(f"labeled size {size} exceeds pool size {pool.size}")
    pool_labels = labels[pool]
    frauds = pool[pool_labels == 1]
    legits = pool[pool_labels == 0]
    n_fraud = min(math.ceil(size * frauds.size / pool.size), frauds.size, size)
    n_legit = size - n_fraud
    picked = np.concatenate(
        [
            rng.permutation(frauds)[:n_fraud],
            rng.permutation(legits)[:n_legit],
        ]
    )
    return np.sort(picked)


def split_and_unlabel(
    labels: np.ndarray,
    labeled_sizes: tuple[int, ...],
    repetitions: int,
    test_fraction: float,
    seed_sequences: dict,
) -> SplitResult:
    """Fixed stratified train/test split plus per-(size, repetition) labeled
    subsets.

    `seed_sequences` maps "split" and (size_index, repetition) keys to
    numpy SeedSequence objects so every draw is independently reproducible.
    """
    rng = np.random.Generator(np.random.PCG64(seed_sequences["split"]))
    train_idx, test_idx = stratified_split(labels, test_fraction, rng)
    labeled: dict = {}
    for si, size in enumerate(labeled_sizes):
        for rep in range(repetitions):
            sub_rng = np.random.Generator(np.random.PCG64(seed_sequences[(si, rep)]))
            labeled[(size, rep)] = stratified_subset(labels, train_idx, size, sub_rng)
    return SplitResult(train_idx=train_idx, test_idx=test_idx, labeled=labeled)
