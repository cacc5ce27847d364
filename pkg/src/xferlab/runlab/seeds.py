"""Seed hierarchy: master seed -> experiment -> cell -> named sub-streams, with an audit log."""
from __future__ import annotations

from dataclasses import dataclass, field

from ..numkit import RngStream


@dataclass
class StreamAudit:
    """Records every stream handed to a cell so disjointness can be checked after the fact."""

    entries: list = field(default_factory=list)

    def record(self, label: str, stream: RngStream) -> RngStream:
        self.entries.append({"label": label, "seed": stream.seed, "stream_id": f"{stream.stream_id:016x}"})
        return stream

    def cell(self, parent: RngStream, label: str, key, subs=()) -> RngStream:
        """Derive the cell stream ``parent.derive(key)`` and log it with its named sub-streams.

        ``subs`` holds name paths, e.g. ``("data", ("alice", "dropout"))``.
        """
        cell = self.record(label, parent.derive(key))
        for sub in subs:
            path = (sub,) if isinstance(sub, (str, int)) else tuple(sub)
            s = cell
            for part in path:
                s = s.derive(part)
            self.record(f"{label}/{'/'.join(map(str, path))}", s)
        return cell

    def disjoint(self) -> bool:
        ids = [(e["seed"], e["stream_id"]) for e in self.entries]
        return len(ids) == len(set(ids))

    def to_list(self) -> list:
        return list(self.entries)


def experiment_stream(master_seed: int, experiment: str) -> RngStream:
    return RngStream(int(master_seed)).derive(experiment)
