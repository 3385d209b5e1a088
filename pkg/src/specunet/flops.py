"""Analytic per-layer FLOPs accounting for any grid config.

Cost model (1 multiply-add = 2 FLOPs, padding taps included):

* conv:            2*k*Cin*Cout*Lout  + Cout*Lout bias adds
* transposed conv: 2*k*Cin*Cout*Lin   + Cout*Lout bias adds (mirrored conv)
* batchnorm:       4 per element (subtract, scale, scale, shift)
* ReLU:            1 per element
* maxpool(2):      1 compare per output element

The test suite cross-checks these totals against an instrumented naive-loop
counter that walks a built model and counts every tap explicitly.
"""

from dataclasses import dataclass

from .model import layer_plan


@dataclass(frozen=True)
class FlopsEntry:
    block: str
    layer: str
    kind: str
    macs: int
    bias_adds: int
    elementwise: int

    @property
    def flops(self):
        return 2 * self.macs + self.bias_adds + self.elementwise


@dataclass(frozen=True)
class FlopsReport:
    config_name: str
    entries: tuple

    @property
    def total(self):
        return sum(e.flops for e in self.entries)

    @property
    def total_macs(self):
        return sum(e.macs for e in self.entries)

    def by_block(self):
        out = {}
        for e in self.entries:
            out[e.block] = out.get(e.block, 0) + e.flops
        return out

    def table(self):
        lines = [f"{'layer':<16s}{'kind':<8s}{'MACs':>12s}{'FLOPs':>14s}"]
        for e in self.entries:
            lines.append(f"{e.layer:<16s}{e.kind:<8s}{e.macs:>12d}{e.flops:>14d}")
        lines.append(f"{'total':<36s}{self.total:>14d}  ({self.total / 1e6:.2f} M)")
        return "\n".join(lines)


def count_flops(config):
    """Closed-form FLOPs for one forward pass over a single spectrum."""
    entries = []
    for e in layer_plan(config):
        if e.kind == "conv":
            macs = e.k * e.cin * e.cout * e.out_len
            entries.append(FlopsEntry(e.block, e.name, e.kind, macs,
                                      e.cout * e.out_len, 0))
        elif e.kind == "convtr":
            macs = e.k * e.cin * e.cout * e.in_len
            entries.append(FlopsEntry(e.block, e.name, e.kind, macs,
                                      e.cout * e.out_len, 0))
        elif e.kind == "bn":
            entries.append(FlopsEntry(e.block, e.name, e.kind, 0, 0,
                                      4 * e.cout * e.out_len))
        elif e.kind == "relu":
            entries.append(FlopsEntry(e.block, e.name, e.kind, 0, 0,
                                      e.cout * e.out_len))
        elif e.kind == "pool":
            entries.append(FlopsEntry(e.block, e.name, e.kind, 0, 0,
                                      e.cout * e.out_len))
        else:
            raise ValueError(e.kind)
    return FlopsReport(config.name, tuple(entries))
