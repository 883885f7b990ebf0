"""
Communication Cost Meter
Records one CostRecord per rank per collective call. Each record carries the
words the backend actually moved (measured) next to the collective cost model:

- All-Gather:     bandwidth (1 - 1/Q)·W, W = words each rank holds after the gather
- Reduce-Scatter: bandwidth (1 - 1/Q)·W, W = words each rank holds before the reduction
- All-to-All:     bandwidth W, W = words the rank starts with; latency Q - 1
- latency ⌈log₂Q⌉ for All-Gather and Reduce-Scatter

A group of one moves nothing and is charged nothing.
"""

import csv
import io
import threading
from collections import OrderedDict
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, List, Optional, TextIO, Tuple, Union

ALL_GATHER = "all_gather"
REDUCE_SCATTER = "reduce_scatter"
ALL_TO_ALL = "all_to_all"
COLLECTIVES = (ALL_GATHER, REDUCE_SCATTER, ALL_TO_ALL)

CSV_COLUMNS = [
    "rank", "call_site", "collective", "calls", "words_sent", "words_received",
    "messages", "model_bandwidth", "model_latency",
]


def log2_ceil(q: int) -> int:
    """⌈log₂q⌉ for q >= 1."""
    return (q - 1).bit_length()


def model_bandwidth(collective: str, group_size: int, words: int) -> Fraction:
    """Model bandwidth of one collective call for one rank."""
    if collective not in COLLECTIVES:
        raise ValueError(f"unknown collective '{collective}'")
    if group_size <= 1:
        return Fraction(0)
    if collective == ALL_TO_ALL:
        return Fraction(words)
    return Fraction(group_size - 1, group_size) * words


def model_latency(collective: str, group_size: int) -> int:
    """Model message count of one collective call for one rank."""
    if collective not in COLLECTIVES:
        raise ValueError(f"unknown collective '{collective}'")
    if group_size <= 1:
        return 0
    if collective == ALL_TO_ALL:
        return group_size - 1
    return log2_ceil(group_size)


def format_fraction(value: Fraction) -> str:
    """Integers print bare, other rationals as p/q."""
    value = Fraction(value)
    return str(value.numerator) if value.denominator == 1 else f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class CostRecord:
    """One rank's share of one collective call."""
    rank: int
    label: str
    collective: str
    group_size: int
    words_sent: int
    words_received: int
    messages: int
    model_bandwidth: Fraction
    model_latency: int

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["model_bandwidth"] = format_fraction(self.model_bandwidth)
        return data


@dataclass
class RankTotals:
    """Accumulated costs along one rank's call sequence."""
    words_sent: int = 0
    words_received: int = 0
    messages: int = 0
    model_bandwidth: Fraction = Fraction(0)
    model_latency: int = 0

    @property
    def words(self) -> int:
        return self.words_sent + self.words_received

    def add(self, record: CostRecord):
        self.words_sent += record.words_sent
        self.words_received += record.words_received
        self.messages += record.messages
        self.model_bandwidth += record.model_bandwidth
        self.model_latency += record.model_latency


class CostMeter:
    """Thread-safe sink for CostRecords; shared by every rank of one SPMD run."""

    def __init__(self, world_size: int):
        self.world_size = world_size
        self._records: List[CostRecord] = []
        self._lock = threading.Lock()

    def record(
        self,
        rank: int,
        label: str,
        collective: str,
        group_size: int,
        model_words: int,
        words_sent: int,
        words_received: int,
        messages: int,
    ) -> CostRecord:
        entry = CostRecord(
            rank=rank,
            label=label,
            collective=collective,
            group_size=group_size,
            words_sent=int(words_sent),
            words_received=int(words_received),
            messages=int(messages),
            model_bandwidth=model_bandwidth(collective, group_size, model_words),
            model_latency=model_latency(collective, group_size),
        )
        with self._lock:
            self._records.append(entry)
        return entry

    def report(self) -> "CostReport":
        with self._lock:
            records = list(self._records)
        # Per-rank call order is preserved; ranks are interleaved by rank id
        records.sort(key=lambda rec: rec.rank)
        return CostReport(self.world_size, records)


class CostReport:
    """Merged cost records of an SPMD run."""

    def __init__(self, world_size: int, records: Optional[Iterable[CostRecord]] = None):
        self.world_size = world_size
        self.records: List[CostRecord] = list(records or [])

    def rank_totals(self) -> Dict[int, RankTotals]:
        totals = {rank: RankTotals() for rank in range(self.world_size)}
        for record in self.records:
            totals[record.rank].add(record)
        return totals

    def for_rank(self, rank: int) -> RankTotals:
        return self.rank_totals()[rank]

    @property
    def critical_path_words(self) -> int:
        """Max over ranks of measured words sent + received."""
        return max((t.words for t in self.rank_totals().values()), default=0)

    @property
    def max_model_bandwidth(self) -> Fraction:
        return max((t.model_bandwidth for t in self.rank_totals().values()), default=Fraction(0))

    @property
    def max_model_latency(self) -> int:
        return max((t.model_latency for t in self.rank_totals().values()), default=0)

    @property
    def total_words_sent(self) -> int:
        return sum(r.words_sent for r in self.records)

    @property
    def total_words_received(self) -> int:
        return sum(r.words_received for r in self.records)

    def filter(self, labels: Iterable[str]) -> "CostReport":
        """Sub-report restricted to the given call-site labels."""
        wanted = set(labels)
        return CostReport(self.world_size, [r for r in self.records if r.label in wanted])

    def labels(self) -> List[str]:
        return list(OrderedDict.fromkeys(r.label for r in self.records))

    def rows(self) -> List[Dict]:
        """One aggregated row per (rank, call site, collective), first-appearance order."""
        grouped: "OrderedDict[Tuple[int, str, str], Dict]" = OrderedDict()
        for record in self.records:
            key = (record.rank, record.label, record.collective)
            row = grouped.setdefault(key, {
                "rank": record.rank, "call_site": record.label, "collective": record.collective,
                "calls": 0, "words_sent": 0, "words_received": 0, "messages": 0,
                "model_bandwidth": Fraction(0), "model_latency": 0,
            })
            row["calls"] += 1
            row["words_sent"] += record.words_sent
            row["words_received"] += record.words_received
            row["messages"] += record.messages
            row["model_bandwidth"] += record.model_bandwidth
            row["model_latency"] += record.model_latency
        return list(grouped.values())

    def to_csv(self, target: Union[str, Path, TextIO, None] = None) -> str:
        """Serialise rows() as CSV; writes to `target` when given and returns the text."""
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.rows():
            writer.writerow({**row, "model_bandwidth": format_fraction(row["model_bandwidth"])})
        text = buffer.getvalue()

        if isinstance(target, (str, Path)):
            Path(target).write_text(text, encoding="utf-8")
        elif target is not None:
            target.write(text)
        return text
