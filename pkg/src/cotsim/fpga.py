"""Simulated SoC-FPGA node: configuration memory with essential bits, a
streaming FIR accelerator, and the mitigation stack (scrubbing, partial
reconfiguration, triple modular redundancy, watchdog-triggered reset).

Fault semantics: a component is healthy iff none of its essential
configuration bits is currently flipped.  An unhealthy component's output
is the correct output XORed with a pseudo-random mask seeded by a
deterministic tag of the flipped-bit set, so replays are exact and
corruption is detectable by voting.
"""

from __future__ import annotations

import hashlib
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from cotsim.config import ArchConfig, ComponentSpec, FRAME_BYTES, DPR_BYTES_PER_US
from cotsim.crc import crc16_ccitt
from cotsim.ecc import secded_encode, secded_decode
from cotsim.engine import SimEngine, Event

FRAME_BITS = FRAME_BYTES * 8
WORD_BYTES = 4


class IcapError(Exception):
    """Programming error in ICAP arbitration (re-entrant acquire)."""


class InvariantViolation(Exception):
    """A simulation invariant was broken (exit code 2 territory)."""


# ---------------------------------------------------------------------------
# configuration memory


def _golden_frame(index: int) -> bytes:
    return bytes((index * 131 + i * 7) & 0xFF for i in range(FRAME_BYTES))


class ConfigMemory:
    """Configuration frames plus a pristine golden copy and flip tracking.

    The flipped-bit sets are the source of truth for component health;
    the byte arrays are kept consistent with them so that CRC/ECC checks
    operate on real content.
    """

    def __init__(self, components: list[ComponentSpec]):
        self.components = {c.name: c for c in components}
        self.frame_owner: list[str] = []
        self.comp_frames: dict[str, range] = {}
        start = 0
        for comp in components:
            self.comp_frames[comp.name] = range(start, start + comp.frames)
            self.frame_owner.extend([comp.name] * comp.frames)
            start += comp.frames
        self.n_frames = start
        self.golden = [_golden_frame(i) for i in range(self.n_frames)]
        self.frames = [bytearray(g) for g in self.golden]
        self.golden_crc = [crc16_ccitt(g) for g in self.golden]
        # evenly spread essential bits across each component's region
        self.essential: dict[str, frozenset] = {}
        self._essential_owner: dict[tuple[int, int], str] = {}
        for comp in components:
            region_bits = comp.frames * FRAME_BITS
            addrs = set()
            for i in range(comp.essential_bits):
                g = i * region_bits // comp.essential_bits
                addr = (self.comp_frames[comp.name].start + g // FRAME_BITS,
                        g % FRAME_BITS)
                addrs.add(addr)
                self._essential_owner[addr] = comp.name
            self.essential[comp.name] = frozenset(addrs)
        self.flipped: dict[int, set[int]] = {}
        self.flipped_essential: dict[str, set] = {
            c.name: set() for c in components}
        self._parity: dict[int, list[int]] = {}  # lazy per-frame ECC store

    # -- mutation -----------------------------------------------------------

    def flip_bit(self, frame: int, bit: int) -> dict:
        """XOR one configuration bit; returns a mutation record."""
        self.frames[frame][bit // 8] ^= 1 << (bit % 8)
        bucket = self.flipped.setdefault(frame, set())
        if bit in bucket:
            bucket.discard(bit)
            if not bucket:
                del self.flipped[frame]
        else:
            bucket.add(bit)
        comp = self._essential_owner.get((frame, bit))
        if comp is not None:
            marks = self.flipped_essential[comp]
            if (frame, bit) in marks:
                marks.discard((frame, bit))
            else:
                marks.add((frame, bit))
        return {"frame": frame, "bit": bit,
                "component": self.frame_owner[frame],
                "essential": comp is not None}

    def restore_frame(self, frame: int) -> None:
        self.frames[frame][:] = self.golden[frame]
        for bit in self.flipped.pop(frame, set()):
            comp = self._essential_owner.get((frame, bit))
            if comp is not None:
                self.flipped_essential[comp].discard((frame, bit))

    def restore_component(self, name: str) -> None:
        for f in self.comp_frames[name]:
            self.restore_frame(f)

    def restore_all(self) -> None:
        for f in range(self.n_frames):
            self.restore_frame(f)

    def write_word(self, frame: int, word: int, value: int) -> None:
        """Write a 32-bit little-endian word, keeping flip tracking exact."""
        base = word * WORD_BYTES
        self.frames[frame][base:base + WORD_BYTES] = value.to_bytes(4, "little")
        golden = self.golden[frame][base:base + WORD_BYTES]
        current = self.frames[frame][base:base + WORD_BYTES]
        bucket = self.flipped.setdefault(frame, set())
        for byte_i in range(WORD_BYTES):
            diff = golden[byte_i] ^ current[byte_i]
            for bit_i in range(8):
                bit = (base + byte_i) * 8 + bit_i
                now_flipped = bool(diff & (1 << bit_i))
                was_flipped = bit in bucket
                if now_flipped == was_flipped:
                    continue
                if now_flipped:
                    bucket.add(bit)
                else:
                    bucket.discard(bit)
                comp = self._essential_owner.get((frame, bit))
                if comp is not None:
                    marks = self.flipped_essential[comp]
                    if now_flipped:
                        marks.add((frame, bit))
                    else:
                        marks.discard((frame, bit))
        if not bucket:
            del self.flipped[frame]

    # -- queries ------------------------------------------------------------

    def read_word(self, frame: int, word: int) -> int:
        base = word * WORD_BYTES
        return int.from_bytes(self.frames[frame][base:base + WORD_BYTES],
                              "little")

    def golden_word(self, frame: int, word: int) -> int:
        base = word * WORD_BYTES
        return int.from_bytes(self.golden[frame][base:base + WORD_BYTES],
                              "little")

    def parity_store(self, frame: int) -> list[int]:
        if frame not in self._parity:
            self._parity[frame] = [
                secded_encode(self.golden_word(frame, w))
                for w in range(FRAME_BYTES // WORD_BYTES)]
        return self._parity[frame]

    def frame_dirty(self, frame: int) -> bool:
        return frame in self.flipped

    def frame_crc_ok(self, frame: int) -> bool:
        return crc16_ccitt(bytes(self.frames[frame])) == self.golden_crc[frame]

    def healthy(self, name: str) -> bool:
        return not self.flipped_essential[name]

    def corruption_tag(self, name: str) -> int:
        """Deterministic 63-bit tag of the component's flipped essential bits."""
        marks = sorted(self.flipped_essential[name])
        digest = hashlib.blake2b(repr(marks).encode(), digest_size=8).digest()
        return int.from_bytes(digest, "big") >> 1

    def total_bits(self) -> int:
        return self.n_frames * FRAME_BITS

    def total_bytes(self) -> int:
        return self.n_frames * FRAME_BYTES


# ---------------------------------------------------------------------------
# accelerator and voting


def fir_filter(samples: np.ndarray, coeffs) -> np.ndarray:
    """Streaming FIR with zero-padded history: out[n] = sum coeffs[k] x[n-k]."""
    coeffs = np.asarray(coeffs, dtype=np.int64)
    if coeffs.size == 0:
        raise ValueError("coefficient array must be non-empty")
    samples = np.asarray(samples, dtype=np.int64)
    return np.convolve(samples, coeffs)[: samples.size]


def corrupt_samples(correct: np.ndarray, tag: int) -> np.ndarray:
    """Deterministic corruption: XOR with a nonzero tag-seeded mask."""
    rng = np.random.Generator(np.random.PCG64(tag))
    mask = rng.integers(1, 1 << 31, size=correct.size, dtype=np.int64)
    return correct ^ mask


VOTE_UNANIMOUS = 0
VOTE_CORRECTED = 1
VOTE_UNCORRECTABLE = 2


def tmr_vote(a, b, c) -> tuple[np.ndarray, np.ndarray]:
    """Element-wise 2-of-3 majority.

    Status per element: unanimous, corrected, or uncorrectable (all three
    differ; the first input's value is emitted and flagged).
    """
    a = np.asarray(a)
    b = np.asarray(b)
    c = np.asarray(c)
    if not (a.shape == b.shape == c.shape):
        raise ValueError("vote inputs must have equal length")
    ab = a == b
    ac = a == c
    bc = b == c
    out = np.where(ab | ac, a, np.where(bc, b, a))
    status = np.full(a.shape, VOTE_CORRECTED, dtype=np.int8)
    status[ab & ac] = VOTE_UNANIMOUS
    status[~(ab | ac | bc)] = VOTE_UNCORRECTABLE
    return out, status


# ---------------------------------------------------------------------------
# ICAP arbitration


class IcapArbiter:
    """Exclusive grant over the configuration access port, FIFO waiters."""

    def __init__(self):
        self.owner: str | None = None
        self.queue: deque = deque()
        self.grants = 0
        self.releases = 0

    def acquire(self, owner: str, on_grant) -> str:
        if self.owner == owner or any(o == owner for o, _ in self.queue):
            raise IcapError(f"re-entrant ICAP request by {owner!r}")
        if self.owner is None:
            self._grant(owner, on_grant)
            return "grant"
        self.queue.append((owner, on_grant))
        return "queued"

    def release(self, owner: str) -> None:
        if self.owner != owner:
            raise IcapError(f"{owner!r} released ICAP it does not hold")
        self.owner = None
        self.releases += 1
        if self.queue:
            nxt, cb = self.queue.popleft()
            self._grant(nxt, cb)

    def reset(self) -> None:
        self.owner = None
        self.queue.clear()

    def _grant(self, owner: str, on_grant) -> None:
        if self.owner is not None:
            raise InvariantViolation("double ICAP grant")
        self.owner = owner
        self.grants += 1
        on_grant()


# ---------------------------------------------------------------------------
# scrubber


@dataclass
class ScrubReport:
    detections: int = 0
    repairs: int = 0
    uncorrectable: int = 0
    corrected_bits: int = 0


class Scrubber:
    """Cyclic frame scan with per-frame repair through the ICAP.

    replace mode reloads the golden frame; enhanced_repair corrects up to
    one flipped bit per 32-bit word from the stored ECC and re-checks the
    frame CRC, reporting (but not fixing) multi-bit words.
    """

    def __init__(self, node: "FpgaNode"):
        self.node = node
        self.mem = node.mem
        self.mode = node.arch.scrub_mode
        self.pointer = 0
        self.repair_frame: int | None = None
        self.known_uncorrectable: dict[int, frozenset] = {}
        self.report = ScrubReport()

    def functional(self) -> bool:
        return "cms_ctrl" not in self.mem.components or \
            self.mem.healthy("cms_ctrl")

    def step(self) -> None:
        """One scan tick: check the current frame, start a repair on damage."""
        if not self.functional():
            return
        self.node.heartbeat()
        if self.repair_frame is not None:
            return  # correction in progress; scan resumes afterwards
        frame = self.pointer
        self.pointer = (self.pointer + 1) % self.mem.n_frames
        if not self.mem.frame_dirty(frame):
            return
        signature = frozenset(self.mem.flipped[frame])
        if self.known_uncorrectable.get(frame) == signature:
            return
        self.report.detections += 1
        self.repair_frame = frame
        self.node.icap.acquire("cms", self._on_grant)

    def _on_grant(self) -> None:
        self.node.engine.schedule_in(
            self.node.arch.frame_repair_latency_us, self.node.target,
            "cms_repair_done", (self.node.epoch, self.repair_frame))

    def finish_repair(self, frame: int) -> None:
        if self.mode == "replace":
            self.mem.restore_frame(frame)
            self.report.repairs += 1
        else:
            self._enhanced_repair(frame)
        self.repair_frame = None
        self.node.icap.release("cms")

    def _enhanced_repair(self, frame: int) -> None:
        damaged_words = {bit // 32 for bit in self.mem.flipped.get(frame, ())}
        parity = self.mem.parity_store(frame)
        for w in sorted(damaged_words):
            value, status = secded_decode(self.mem.read_word(frame, w),
                                          parity[w])
            if status == "corrected":
                self.mem.write_word(frame, w, value)
                self.report.corrected_bits += 1
        if self.mem.frame_dirty(frame):
            # CRC re-check fails: some word had more than one flipped bit
            self.report.uncorrectable += 1
            self.known_uncorrectable[frame] = frozenset(
                self.mem.flipped[frame])
        else:
            self.report.repairs += 1
            self.known_uncorrectable.pop(frame, None)

    def reset(self) -> None:
        self.pointer = 0
        self.repair_frame = None
        self.known_uncorrectable.clear()


# ---------------------------------------------------------------------------
# partial reconfiguration


def reload_duration_us(region_bytes: int) -> int:
    """Reload time at the configuration-port throughput, ceil to 1 us."""
    return -(-region_bytes // DPR_BYTES_PER_US)


class DprController:
    """Reloads reconfigurable regions from the golden store.

    Requests queue FIFO; one reload at a time, holding the ICAP for the
    region transfer.  Without redundancy-based detection the controller
    also rotates blindly over the reloadable regions.
    """

    def __init__(self, node: "FpgaNode"):
        self.node = node
        self.mem = node.mem
        self.queue: deque[str] = deque()
        self.active: str | None = None
        self.rotation = [c.name for c in node.arch.components if c.reloadable]
        self.rotation_idx = 0
        self.reloads = 0
        self.dropped = 0

    def functional(self) -> bool:
        return "dpr_ctrl" not in self.mem.components or \
            self.mem.healthy("dpr_ctrl")

    def request_reload(self, comp: str) -> None:
        if not self.functional():
            self.dropped += 1
            return
        if comp == self.active or comp in self.queue:
            return
        if not self.mem.components[comp].reloadable:
            return
        self.queue.append(comp)
        self._pump()

    def blind_step(self) -> None:
        if not self.rotation:
            return
        comp = self.rotation[self.rotation_idx]
        self.rotation_idx = (self.rotation_idx + 1) % len(self.rotation)
        self.request_reload(comp)

    def _pump(self) -> None:
        if self.active is not None or not self.queue:
            return
        self.active = self.queue.popleft()
        self.node.icap.acquire("dpr", self._on_grant)

    def _on_grant(self) -> None:
        duration = reload_duration_us(
            self.mem.components[self.active].size_bytes())
        self.node.engine.schedule_in(
            duration, self.node.target, "dpr_reload_done",
            (self.node.epoch, self.active))

    def finish_reload(self, comp: str) -> None:
        self.mem.restore_component(comp)
        self.reloads += 1
        self.active = None
        self.node.icap.release("dpr")
        self._pump()

    def reset(self) -> None:
        self.queue.clear()
        self.active = None
        self.rotation_idx = 0


# ---------------------------------------------------------------------------
# watchdog


class Watchdog:
    """External supervisor: resets the node when heartbeats stop arriving."""

    def __init__(self, node: "FpgaNode"):
        self.node = node
        self.last_heartbeat = 0
        self.resets = 0

    def notify(self) -> None:
        self.last_heartbeat = self.node.engine.now

    def check(self) -> None:
        node = self.node
        if node.in_reset:
            return
        if node.engine.now - self.last_heartbeat > node.arch.wd_timeout_us:
            self.resets += 1
            node.full_reset("watchdog")


# ---------------------------------------------------------------------------
# node


class FpgaNode:
    """Event-driven FPGA model wired onto a simulation engine."""

    def __init__(self, engine: SimEngine, arch: ArchConfig,
                 target: str = "fpga"):
        self.engine = engine
        self.arch = arch
        self.target = target
        self.mem = ConfigMemory(arch.components)
        self.icap = IcapArbiter()
        self.scrubber = Scrubber(self) if arch.cms else None
        self.dpr = DprController(self) if arch.dpr else None
        self.wd = Watchdog(self) if arch.wd else None
        self.in_reset = False
        self.epoch = 0
        self.resets = 0
        self.window_input = (np.arange(arch.window_samples, dtype=np.int64)
                             % 23) + 1
        self.golden_output = fir_filter(self.window_input, arch.fir_coeffs)
        engine.register(target, self._handle)

    # -- lifecycle ----------------------------------------------------------

    def start(self) -> None:
        self._schedule_periodic()
        if self.wd is not None:
            self.wd.last_heartbeat = self.engine.now

    def _schedule_periodic(self) -> None:
        ep = self.epoch
        if self.scrubber is not None:
            self.engine.schedule_in(self.arch.scan_period_us, self.target,
                                    "cms_scan", (ep,))
        if self.dpr is not None:
            self.engine.schedule_in(self.arch.dpr_blind_period_us, self.target,
                                    "dpr_blind", (ep,))
        if self.wd is not None:
            self.engine.schedule_in(self.arch.wd_timeout_us // 2, self.target,
                                    "wd_check", (ep,))

    def _handle(self, ev: Event) -> None:
        if ev.params and ev.params[0] != self.epoch:
            return  # stale event from before a full reset
        if ev.kind == "cms_scan":
            if not self.in_reset:
                self.scrubber.step()
            self.engine.schedule_in(self.arch.scan_period_us, self.target,
                                    "cms_scan", (self.epoch,))
        elif ev.kind == "cms_repair_done":
            self.scrubber.finish_repair(ev.params[1])
        elif ev.kind == "dpr_blind":
            if not self.in_reset and self.dpr is not None:
                self.dpr.blind_step()
            self.engine.schedule_in(self.arch.dpr_blind_period_us, self.target,
                                    "dpr_blind", (self.epoch,))
        elif ev.kind == "dpr_reload_done":
            self.dpr.finish_reload(ev.params[1])
        elif ev.kind == "wd_check":
            self.wd.check()
            self.engine.schedule_in(self.arch.wd_timeout_us // 2, self.target,
                                    "wd_check", (self.epoch,))
        elif ev.kind == "reset_done":
            self._finish_reset()

    def heartbeat(self) -> None:
        if self.wd is None:
            return
        if "wd_link" in self.mem.components and not self.mem.healthy("wd_link"):
            return  # status channel itself corrupted: heartbeat lost
        self.wd.notify()

    # -- reset --------------------------------------------------------------

    def reset_duration_us(self) -> int:
        return reload_duration_us(self.mem.total_bytes())

    def full_reset(self, reason: str) -> None:
        """Reboot from stored configuration: node is down for the reload."""
        if self.in_reset:
            return
        self.in_reset = True
        self.resets += 1
        self.epoch += 1  # invalidates every pending repair/reload/periodic
        self.icap.reset()
        if self.scrubber is not None:
            self.scrubber.reset()
        if self.dpr is not None:
            self.dpr.reset()
        self.engine.schedule_in(self.reset_duration_us(), self.target,
                                "reset_done", (self.epoch,))

    def _finish_reset(self) -> None:
        self.mem.restore_all()
        self.in_reset = False
        if self.wd is not None:
            self.wd.last_heartbeat = self.engine.now
        self._schedule_periodic()

    # -- datapath -----------------------------------------------------------

    def _component_output(self, comp: str, samples: np.ndarray) -> np.ndarray:
        correct = fir_filter(samples, self.arch.fir_coeffs)
        if self.mem.healthy(comp):
            return correct
        return corrupt_samples(correct, self.mem.corruption_tag(comp))

    def _pass_through(self, comp: str, data: np.ndarray) -> np.ndarray:
        if self.mem.healthy(comp):
            return data
        return corrupt_samples(np.asarray(data, dtype=np.int64),
                               self.mem.corruption_tag(comp))

    def run_pipeline(self, samples: np.ndarray | None = None,
                     ) -> tuple[np.ndarray, list[str]]:
        """One accelerator pass; returns (output, repair requests raised).

        With TMR the input is voted across three replicated paths, the
        three accelerator instances run, and the outputs are voted; a
        minority replica (or an uncorrectable vote) raises repair
        requests by name.
        """
        if samples is None:
            samples = self.window_input
        if not self.arch.tmr:
            return self._component_output("fir_0", samples), []
        voted_in = self._pass_through("voter_in", samples)
        outs = [self._component_output(f"fir_{i}", voted_in) for i in range(3)]
        voted, status = tmr_vote(*outs)
        requests = [f"fir_{i}" for i in range(3)
                    if not np.array_equal(outs[i], voted)]
        if np.any(status == VOTE_UNCORRECTABLE):
            requests = ["fir_0", "fir_1", "fir_2"]
        final = self._pass_through("voter_out", voted)
        return final, requests

    def evaluate_window(self, state_seed: int = 0) -> str:
        """Classify the node's current functionality: down/erroneous/correct.

        A wrong output maps to "down" (hang) or "erroneous" (garbage) as a
        deterministic pseudo-random function of the window time and the
        current fault state, calibrated by arch.app_down_fraction.
        """
        if self.in_reset:
            return "down"
        output, requests = self.run_pipeline()
        if self.dpr is not None:
            for comp in requests:
                self.dpr.request_reload(comp)
        if np.array_equal(output, self.golden_output):
            return "correct"
        state = sorted((name, self.mem.corruption_tag(name))
                       for name in self.mem.components
                       if not self.mem.healthy(name))
        digest = hashlib.blake2b(
            f"{state_seed}:{self.engine.now}:{state}".encode(),
            digest_size=8).digest()
        u = int.from_bytes(digest, "big") / 2**64
        return "down" if u < self.arch.app_down_fraction else "erroneous"
