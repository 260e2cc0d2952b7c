"""Resource accounting for a compiled bundle.

Reports exact-match table entry counts and value widths, per-flow stateful
bits, and the TCAM entries the argmax chain needs.  Stateful cells follow
the hardware convention: ring cells are byte-wide, flow info is the
32-bit TrueID + 32-bit timestamp, the two packet counters and the
escalation mark are byte cells, and an extra 32-bit timestamp backs the
IPD subtraction.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import ternary
from .bundle import ModelBundle
from .window import EV_CELL_BITS


@dataclass
class ResourceReport:
    tables: dict[str, dict]
    stateful_bits: dict[str, int]
    argmax: dict

    def total_table_entries(self) -> int:
        return sum(t["entries"] for t in self.tables.values())

    def total_stateful_bits(self) -> int:
        return sum(self.stateful_bits.values())

    def to_json(self) -> dict:
        return {
            "tables": self.tables,
            "stateful_bits_per_flow": self.stateful_bits,
            "stateful_total_per_flow": self.total_stateful_bits(),
            "argmax": self.argmax,
        }


def estimate_resources(bundle: ModelBundle, fan: int = 3) -> ResourceReport:
    tables = {}
    multiplicity = {
        # steps 3..S-1 of the merged layout share one interior table's
        # content but occupy one stage each on hardware
        "gru_mid": max(bundle.S - 3, 0) if bundle.merged else bundle.S - 1,
    }
    for slot, (iw, ow) in bundle.expected_table_widths().items():
        tables[slot] = {
            "input_width": iw,
            "output_width": ow,
            "entries": 1 << iw,
            "stages": multiplicity.get(slot, 1),
        }

    stateful = {
        "flow_info": 64,  # TrueID(32) + timestamp(32)
        "packet_counters": 16,  # two byte-wide counters
        "last_ts": 32,  # extra timestamp for the IPD subtraction
        "ev_ring": EV_CELL_BITS * (bundle.S - 1) + EV_CELL_BITS,
        "cpr": bundle.n_classes * bundle.cpr_width,
        "wincnt": 8,
        "escalation_mark": 8,
    }

    chain = ternary.split_argmax(bundle.n_classes, bundle.cpr_width, max(fan, 2), bundle.tie_order)
    stages = [
        {"n": s.table.n, "m": s.table.m, "entries": len(s.table)} for s in chain.stages
    ]
    argmax = {
        "n": bundle.n_classes,
        "m": bundle.cpr_width,
        "fan": fan,
        "stages": stages,
        "tcam_entries": chain.total_entries(),
        "single_table_entries": ternary.count_entries(bundle.n_classes, bundle.cpr_width),
    }
    return ResourceReport(tables=tables, stateful_bits=stateful, argmax=argmax)
