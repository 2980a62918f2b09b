"""Simulated VPU node: a supervisor core orchestrating 12 worker cores over
DDR plus a 2 MB scratchpad, with CRC-based instruction/data recovery and
N-modular redundancy.

Workers are logically parallel but executed sequentially in fixed id
order, so runs are deterministic.  Timing is synthetic: reports carry
latencies derived from configured per-task constants, not measurements.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from cotsim.crc import crc16_ccitt

N_WORKERS = 12
CMX_BYTES = 2 * 1024 * 1024
INSTR_BYTES = 4096

# synthetic task-time constants (reported, not measured)
CRC_CHECK_US = 8_000
RESCHEDULE_US = 40_000
KERNEL_US_PER_PIXEL = 0.25
VOTE_US_PER_PIXEL = 0.01
DMA_US = 100


class VpuError(Exception):
    pass


class WorkloadError(VpuError):
    """Bad image geometry for the requested partitioning or kernel."""


# ---------------------------------------------------------------------------
# kernels


def conv2d(tile: np.ndarray, kernel: np.ndarray, pad_top: bool,
           pad_bottom: bool) -> np.ndarray:
    """3x3 float convolution over a halo-extended tile.

    The tile carries one real halo row on each side that is not a global
    image edge; pad_top/pad_bottom mark edge sides (zero padded there).
    Columns are always zero padded.  Output rows are the tile's own rows,
    halo excluded.
    """
    kernel = np.asarray(kernel, dtype=np.float64)
    if kernel.shape != (3, 3):
        raise WorkloadError("kernel must be 3x3")
    work = np.asarray(tile, dtype=np.float64)
    if pad_top:
        work = np.vstack([np.zeros((1, work.shape[1])), work])
    if pad_bottom:
        work = np.vstack([work, np.zeros((1, work.shape[1]))])
    if work.shape[0] < 3:
        raise WorkloadError("tile is missing its halo rows")
    work = np.hstack([np.zeros((work.shape[0], 1)), work,
                      np.zeros((work.shape[0], 1))])
    out = np.zeros((work.shape[0] - 2, work.shape[1] - 2))
    for di in range(3):
        for dj in range(3):
            out += kernel[di, dj] * work[di:di + out.shape[0],
                                         dj:dj + out.shape[1]]
    return out


def binning2d(tile: np.ndarray, factor: int = 2) -> np.ndarray:
    """Averaging binning: block mean rounded half-up to an integer pixel."""
    tile = np.asarray(tile)
    h, w = tile.shape
    if h % factor or w % factor:
        raise WorkloadError(
            f"tile {h}x{w} not divisible by binning factor {factor}")
    blocks = tile.reshape(h // factor, factor, w // factor, factor)
    means = blocks.astype(np.float64).mean(axis=(1, 3))
    return np.floor(means + 0.5).astype(np.int64)


def conv2d_reference(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Whole-image convolution with zero padding (golden path)."""
    return conv2d(image, kernel, pad_top=True, pad_bottom=True)


KERNELS = ("conv2d", "binning2d")
DEFAULT_CONV_KERNEL = np.array([[0.0625, 0.125, 0.0625],
                                [0.125, 0.25, 0.125],
                                [0.0625, 0.125, 0.0625]])


def kernel_halo(kernel_name: str) -> int:
    return 1 if kernel_name == "conv2d" else 0


def kernel_row_unit(kernel_name: str) -> int:
    # binning stripes must hold whole 2x2 blocks
    return 2 if kernel_name == "binning2d" else 1


def golden_output(image: np.ndarray, kernel_name: str) -> np.ndarray:
    if kernel_name == "conv2d":
        return conv2d_reference(image, DEFAULT_CONV_KERNEL)
    if kernel_name == "binning2d":
        return binning2d(image)
    raise WorkloadError(f"unknown kernel {kernel_name!r}")


# ---------------------------------------------------------------------------
# workload partitioning


@dataclass
class Tile:
    worker: int
    row_start: int
    row_end: int  # exclusive, output rows of the stripe
    halo: int
    data: np.ndarray  # input stripe including available halo rows
    crc: int = 0

    def payload(self) -> bytes:
        return np.ascontiguousarray(self.data, dtype=">u2").tobytes()

    def seal(self) -> None:
        self.crc = crc16_ccitt(self.payload())

    def crc_ok(self) -> bool:
        return crc16_ccitt(self.payload()) == self.crc


def partition_workload(image: np.ndarray, workers: int, halo: int = 0,
                       row_unit: int = 1) -> list[Tile]:
    """Contiguous horizontal stripes, heights differing by at most one
    row_unit, halo rows duplicated, CRC appended per tile."""
    if workers < 1:
        raise WorkloadError("need at least one worker")
    h = image.shape[0]
    if h % row_unit:
        raise WorkloadError(f"image height {h} not a multiple of {row_unit}")
    units = h // row_unit
    if units < workers:
        raise WorkloadError(f"image height {h} too small for {workers} workers")
    base, extra = divmod(units, workers)
    tiles = []
    row = 0
    for w in range(workers):
        height = (base + (1 if w < extra else 0)) * row_unit
        r0, r1 = row, row + height
        lo = max(0, r0 - halo)
        hi = min(h, r1 + halo)
        tile = Tile(worker=w, row_start=r0, row_end=r1, halo=halo,
                    data=image[lo:hi].copy())
        tile.seal()
        tiles.append(tile)
        row = r1
    return tiles


# ---------------------------------------------------------------------------
# fault surface helpers


def _instr_image(worker_id: int) -> bytes:
    return bytes((worker_id * 37 + i * 11) & 0xFF for i in range(INSTR_BYTES))


def _corruption_tag(payload: bytes) -> int:
    digest = hashlib.blake2b(payload, digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


def corrupt_stripe(stripe: np.ndarray, tag: int) -> np.ndarray:
    """XOR every byte of the stripe with a nonzero tag-seeded mask."""
    rng = np.random.Generator(np.random.PCG64(tag))
    flat = np.ascontiguousarray(stripe).reshape(-1).view(np.uint8).copy()
    mask = rng.integers(1, 256, size=flat.size, dtype=np.uint8)
    return (flat ^ mask).view(stripe.dtype).reshape(stripe.shape)


@dataclass
class WorkerCore:
    id: int
    instr_mem: bytearray
    status: str = "functional"


@dataclass
class RecoveryReport:
    impaired: list[int] = field(default_factory=list)
    redispatched: list[int] = field(default_factory=list)
    degraded_mode: bool = False
    unrecoverable_input: bool = False
    crc_check_us: int = CRC_CHECK_US
    reschedule_us: int = 0
    latency_us: float = 0.0


@dataclass
class VoteReport:
    n: int
    groups: list[list[int]]
    unused: list[int]
    flagged_pixels: int = 0
    latency_us: float = 0.0


# ---------------------------------------------------------------------------
# node


class VpuNode:
    """Supervisor plus 12 workers with golden instruction/input copies.

    `golden_input` is the CRC-verified copy retained at reception; tile
    checksums are computed from it, so corruption of the working DDR copy
    or of a CMX tile is caught by the per-tile check.
    """

    def __init__(self, image: np.ndarray, kernel_name: str):
        if kernel_name not in KERNELS:
            raise WorkloadError(f"unknown kernel {kernel_name!r}")
        self.kernel_name = kernel_name
        self.workers = [WorkerCore(i, bytearray(_instr_image(i)))
                        for i in range(N_WORKERS)]
        self.golden_instr = [_instr_image(i) for i in range(N_WORKERS)]
        self.instr_crc_baseline = [crc16_ccitt(g) for g in self.golden_instr]
        self.ddr_input = np.asarray(image, dtype=np.uint16).copy()
        self.golden_input = self.ddr_input.copy()
        if 2 * self.ddr_input.nbytes > CMX_BYTES:
            raise VpuError("workload does not fit the 2 MB scratchpad")

    # -- fault surface ------------------------------------------------------

    def corrupt_instr(self, worker_id: int, offsets_values) -> None:
        mem = self.workers[worker_id].instr_mem
        for off, val in offsets_values:
            mem[off % INSTR_BYTES] ^= (val & 0xFF) or 0x01

    def worker_impaired(self, worker_id: int) -> bool:
        return bytes(self.workers[worker_id].instr_mem) != \
            self.golden_instr[worker_id]

    def restore_instr(self, worker_id: int) -> None:
        self.workers[worker_id].instr_mem[:] = self.golden_instr[worker_id]
        self.workers[worker_id].status = "functional"

    def dma_tiles(self) -> list[Tile]:
        """Partition the working DDR copy; checksums come from the
        verified copy, so pre-DMA corruption is detectable downstream."""
        tiles = partition_workload(self.ddr_input, N_WORKERS,
                                   halo=kernel_halo(self.kernel_name),
                                   row_unit=kernel_row_unit(self.kernel_name))
        golden = partition_workload(self.golden_input, N_WORKERS,
                                    halo=kernel_halo(self.kernel_name),
                                    row_unit=kernel_row_unit(self.kernel_name))
        for tile, ref in zip(tiles, golden):
            tile.crc = ref.crc
        return tiles

    # -- execution ----------------------------------------------------------

    def _compute_tile(self, tile: Tile) -> np.ndarray:
        if self.kernel_name == "conv2d":
            pad_top = tile.row_start - tile.halo < 0
            pad_bottom = tile.row_end + tile.halo > self.golden_input.shape[0]
            return conv2d(tile.data, DEFAULT_CONV_KERNEL, pad_top, pad_bottom)
        return binning2d(tile.data)

    def worker_execute(self, worker_id: int, tile: Tile) -> np.ndarray:
        """Run the kernel on one tile.

        Corrupted instructions garble the (otherwise correct) output via a
        deterministic mask; corrupted tile data is processed faithfully
        (garbage in, garbage out).
        """
        correct = self._compute_tile(tile)
        if not self.worker_impaired(worker_id):
            return correct
        tag = _corruption_tag(bytes(self.workers[worker_id].instr_mem))
        return corrupt_stripe(correct, tag)

    def _stripe_time_us(self, tile: Tile) -> float:
        return tile.data.size * KERNEL_US_PER_PIXEL

    def _assemble(self, tiles: list[Tile],
                  outputs: dict[int, np.ndarray]) -> np.ndarray:
        return np.vstack([outputs[t.worker] for t in tiles])

    def run_plain(self, tiles: list[Tile] | None = None,
                  ) -> tuple[np.ndarray, float]:
        """12-way parallel run with no fault tolerance."""
        if tiles is None:
            tiles = self.dma_tiles()
        outputs = {t.worker: self.worker_execute(t.worker, t) for t in tiles}
        latency = max(self._stripe_time_us(t) for t in tiles) + DMA_US
        return self._assemble(tiles, outputs), latency

    # -- instruction memory recovery ---------------------------------------

    def imr_run(self, tiles: list[Tile] | None = None,
                ) -> tuple[np.ndarray, RecoveryReport]:
        """Detect corrupted worker code by CRC, re-dispatch its tiles to
        functional workers, then restore the code from the golden copy."""
        if tiles is None:
            tiles = self.dma_tiles()
        report = RecoveryReport()
        impaired = [w.id for w in self.workers
                    if crc16_ccitt(bytes(w.instr_mem))
                    != self.instr_crc_baseline[w.id]]
        report.impaired = impaired
        functional = [w.id for w in self.workers if w.id not in impaired]
        base_latency = max(self._stripe_time_us(t) for t in tiles) + DMA_US

        if not functional:
            # no healthy worker left: restore everything first, then run
            for wid in impaired:
                self.restore_instr(wid)
            report.degraded_mode = True
            report.reschedule_us = RESCHEDULE_US
            outputs = {t.worker: self.worker_execute(t.worker, t)
                       for t in tiles}
            report.latency_us = (base_latency + CRC_CHECK_US + RESCHEDULE_US
                                 + base_latency)
            return self._assemble(tiles, outputs), report

        outputs = {t.worker: self.worker_execute(t.worker, t) for t in tiles}
        redo = [t for t in tiles if t.worker in impaired]
        redo_latency = 0.0
        if redo:
            report.reschedule_us = RESCHEDULE_US
            for i, tile in enumerate(redo):
                stand_in = functional[i % len(functional)]
                outputs[tile.worker] = self.worker_execute(stand_in, tile)
                report.redispatched.append(tile.worker)
            redo_latency = max(self._stripe_time_us(t) for t in redo)
        for wid in impaired:
            self.restore_instr(wid)
        report.latency_us = (base_latency + CRC_CHECK_US
                             + report.reschedule_us + redo_latency)
        return self._assemble(tiles, outputs), report

    # -- data memory recovery ----------------------------------------------

    def dmr_run(self, tiles: list[Tile]) -> tuple[np.ndarray, RecoveryReport]:
        """Each worker checks its tile CRC before computing; corrupted
        tiles are restored from the retained verified input and
        rescheduled on the workers whose data passed."""
        report = RecoveryReport()
        bad = [t.worker for t in tiles if not t.crc_ok()]
        report.impaired = bad
        base_latency = max(self._stripe_time_us(t) for t in tiles) + DMA_US

        outputs = {}
        for tile in tiles:
            if tile.worker not in bad:
                outputs[tile.worker] = self.worker_execute(tile.worker, tile)

        redo_latency = 0.0
        if bad:
            report.reschedule_us = RESCHEDULE_US
            functional = [t.worker for t in tiles if t.worker not in bad] \
                or list(range(N_WORKERS))
            fresh = {t.worker: t for t in partition_workload(
                self.golden_input, N_WORKERS,
                halo=kernel_halo(self.kernel_name),
                row_unit=kernel_row_unit(self.kernel_name))}
            for i, wid in enumerate(bad):
                tile = fresh[wid]
                # restored data must match the checksum sealed at reception,
                # otherwise the retained copy itself has been corrupted
                if crc16_ccitt(tile.payload()) != tiles[wid].crc:
                    report.unrecoverable_input = True
                    outputs[wid] = self.worker_execute(wid, tiles[wid])
                    continue
                stand_in = functional[i % len(functional)]
                outputs[wid] = self.worker_execute(stand_in, tile)
                report.redispatched.append(wid)
            if report.redispatched:
                redo_latency = max(self._stripe_time_us(fresh[w])
                                   for w in report.redispatched)
        report.latency_us = (base_latency + CRC_CHECK_US
                             + report.reschedule_us + redo_latency)
        return self._assemble(tiles, outputs), report

    # -- N modular redundancy ----------------------------------------------

    @staticmethod
    def nmr_groups(n: int) -> tuple[list[list[int]], list[int]]:
        if n not in (1, 3, 5):
            raise VpuError(f"unsupported redundancy degree {n}")
        n_groups = N_WORKERS // n
        groups = [list(range(g * n, (g + 1) * n)) for g in range(n_groups)]
        used = n_groups * n
        return groups, list(range(used, N_WORKERS))

    def nmr_run(self, n: int) -> tuple[np.ndarray, VoteReport]:
        """Groups of n workers compute the same stripe; the supervisor
        votes per pixel on the outputs.  No rescheduling, no repair."""
        groups, unused = self.nmr_groups(n)
        report = VoteReport(n=n, groups=groups, unused=unused)
        stripes = partition_workload(self.ddr_input, len(groups),
                                     halo=kernel_halo(self.kernel_name),
                                     row_unit=kernel_row_unit(self.kernel_name))
        pieces = []
        flagged = 0
        for group, stripe in zip(groups, stripes):
            outs = [self.worker_execute(wid, stripe) for wid in group]
            voted, nflag = _pixel_majority(outs)
            flagged += nflag
            pieces.append(voted)
        report.flagged_pixels = flagged
        out = np.vstack(pieces)
        stripe_time = max(self._stripe_time_us(s) for s in stripes)
        report.latency_us = stripe_time + DMA_US + out.size * VOTE_US_PER_PIXEL
        return out, report


def _pixel_majority(outputs: list[np.ndarray]) -> tuple[np.ndarray, int]:
    """Per-pixel majority over bit patterns; no-majority pixels fall back
    to member 0 and are flagged."""
    n = len(outputs)
    if n == 1:
        return outputs[0], 0
    itemsize = outputs[0].dtype.itemsize
    stack = np.stack([np.ascontiguousarray(o).view(f"<u{itemsize}")
                      for o in outputs])
    srt = np.sort(stack, axis=0)
    median = srt[n // 2]
    count = (stack == median).sum(axis=0)
    majority = count > n // 2
    voted_bits = np.where(majority, median, stack[0])
    voted = voted_bits.view(outputs[0].dtype)
    return voted, int(np.count_nonzero(~majority))


def error_rate(output: np.ndarray, golden: np.ndarray) -> float:
    """Fraction of pixels differing from the golden image."""
    if output.shape != golden.shape:
        raise VpuError(f"shape mismatch {output.shape} vs {golden.shape}")
    return float(np.count_nonzero(output != golden)) / output.size
