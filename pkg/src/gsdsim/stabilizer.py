"""Binary-symplectic stabilizer tableau for graph-state verification.

Each generator row is i**phase * prod_j X_j^x[j] Z_j^z[j] with phase tracked
mod 4 (hermitian rows keep phase == x.z mod 2).  Enough Clifford machinery is
implemented to prepare graph states, apply CZ layers, measure in the X basis
with forced outcomes for exhaustive branch enumeration, and compare states by
canonical generator form.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model import GraphState, GsdError, channel_key


class Tableau:
    def __init__(self, n: int):
        if n < 1:
            raise GsdError("tableau needs at least one qubit")
        self.n = n
        self.x = np.zeros((n, n), dtype=np.uint8)
        self.z = np.zeros((n, n), dtype=np.uint8)
        self.phase = np.zeros(n, dtype=np.uint8)  # exponent of i, mod 4

    @classmethod
    def plus_state(cls, n: int) -> "Tableau":
        t = cls(n)
        for i in range(n):
            t.x[i, i] = 1
        return t

    def copy(self) -> "Tableau":
        t = Tableau(self.n)
        t.x = self.x.copy()
        t.z = self.z.copy()
        t.phase = self.phase.copy()
        return t

    # -- row algebra -----------------------------------------------------

    def _row_mult(self, dst: int, src: int) -> None:
        """row[dst] *= row[src] with exact phase bookkeeping."""
        swaps = int(np.bitwise_and(self.z[dst], self.x[src]).sum()) % 2
        self.phase[dst] = (self.phase[dst] + self.phase[src] + 2 * swaps) % 4
        self.x[dst] ^= self.x[src]
        self.z[dst] ^= self.z[src]

    def rank(self) -> int:
        m = np.concatenate([self.x, self.z], axis=1).astype(np.uint8)
        return _gf2_rank(m)

    def commutes_all(self) -> bool:
        for a in range(self.n):
            for b in range(a + 1, self.n):
                sym = (int(np.bitwise_and(self.x[a], self.z[b]).sum())
                       + int(np.bitwise_and(self.z[a], self.x[b]).sum())) % 2
                if sym:
                    return False
        return True

    # -- Clifford operations ----------------------------------------------

    def apply_cz(self, i: int, j: int) -> None:
        if i == j or not (0 <= i < self.n and 0 <= j < self.n):
            raise GsdError("bad CZ indices")
        both = np.bitwise_and(self.x[:, i], self.x[:, j])
        self.phase = (self.phase + 2 * both) % 4
        self.z[:, j] ^= self.x[:, i]
        self.z[:, i] ^= self.x[:, j]

    def apply_z(self, i: int) -> None:
        self.phase = (self.phase + 2 * self.x[:, i]) % 4

    def apply_x(self, i: int) -> None:
        self.phase = (self.phase + 2 * self.z[:, i]) % 4

    def measure_x(self, i: int, forced: int = 1) -> int:
        """Measure X_i; returns +1/-1.  `forced` picks the branch when the
        outcome is random and is ignored when it is deterministic."""
        if forced not in (1, -1):
            raise GsdError("forced outcome must be +1 or -1")
        anti = [r for r in range(self.n) if self.z[r, i]]
        if anti:
            pivot = anti[0]
            for r in anti[1:]:
                self._row_mult(r, pivot)
            self.x[pivot] = 0
            self.z[pivot] = 0
            self.x[pivot, i] = 1
            self.phase[pivot] = 0 if forced == 1 else 2
            return forced
        # deterministic: express X_i in the group and read the sign
        return self._deterministic_sign(i)

    def _deterministic_sign(self, i: int) -> int:
        work = self.copy()
        target_x = np.zeros(self.n, dtype=np.uint8)
        target_x[i] = 1
        acc_x = np.zeros(self.n, dtype=np.uint8)
        acc_z = np.zeros(self.n, dtype=np.uint8)
        acc_phase = 0
        rows = list(range(self.n))
        m = np.concatenate([work.x, work.z], axis=1)
        target = np.concatenate([target_x, np.zeros(self.n, dtype=np.uint8)])
        # gaussian elimination tracking which rows combine into the target
        used = _gf2_solve(m, target)
        if used is None:
            raise GsdError(f"X_{i} is not in the stabilizer group")
        for r in used:
            swaps = int(np.bitwise_and(acc_z, work.x[r]).sum()) % 2
            acc_phase = (acc_phase + work.phase[r] + 2 * swaps) % 4
            acc_x ^= work.x[r]
            acc_z ^= work.z[r]
        if acc_phase == 0:
            return 1
        if acc_phase == 2:
            return -1
        raise GsdError("non-hermitian accumulation")

    # -- canonical form ----------------------------------------------------

    def canonical(self, qubit_order: list[int] | None = None) -> tuple:
        """Row-reduced echelon form over GF(2) with sign normalization."""
        t = self.copy()
        order = qubit_order if qubit_order is not None else list(range(self.n))
        columns = [(q, "x") for q in order] + [(q, "z") for q in order]
        row = 0
        for q, kind in columns:
            col = t.x[:, q] if kind == "x" else t.z[:, q]
            pivot = None
            for r in range(row, t.n):
                if col[r]:
                    pivot = r
                    break
            if pivot is None:
                continue
            if pivot != row:
                t.x[[row, pivot]] = t.x[[pivot, row]]
                t.z[[row, pivot]] = t.z[[pivot, row]]
                t.phase[[row, pivot]] = t.phase[[pivot, row]]
            for r in range(t.n):
                if r != row:
                    col = t.x[:, q] if kind == "x" else t.z[:, q]
                    if col[r]:
                        t._row_mult(r, row)
            row += 1
            if row == t.n:
                break
        return tuple(
            (tuple(int(v) for v in t.x[r]), tuple(int(v) for v in t.z[r]), int(t.phase[r]))
            for r in range(t.n)
        )

    def restrict(self, keep: list[int]) -> "Tableau":
        """Stabilizer of the kept register of a product state.

        Valid after the discarded qubits were measured out: canonicalization
        with the discarded qubits' columns first isolates rows supported only
        on the kept ones."""
        drop = [q for q in range(self.n) if q not in keep]
        canon = self.canonical(qubit_order=drop + list(keep))
        rows = []
        for x_row, z_row, ph in canon:
            if any(x_row[q] or z_row[q] for q in drop):
                continue
            rows.append((x_row, z_row, ph))
        if len(rows) != len(keep):
            raise GsdError("register is still entangled with discarded qubits")
        out = Tableau(len(keep))
        for r, (x_row, z_row, ph) in enumerate(rows):
            for new_q, old_q in enumerate(keep):
                out.x[r, new_q] = x_row[old_q]
                out.z[r, new_q] = z_row[old_q]
            out.phase[r] = ph
        return out

    def equals_state(self, other: "Tableau") -> bool:
        if self.n != other.n:
            return False
        return self.canonical() == other.canonical()


def _gf2_rank(m: np.ndarray) -> int:
    m = m.copy() % 2
    rank = 0
    rows, cols = m.shape
    for c in range(cols):
        pivot = None
        for r in range(rank, rows):
            if m[r, c]:
                pivot = r
                break
        if pivot is None:
            continue
        m[[rank, pivot]] = m[[pivot, rank]]
        for r in range(rows):
            if r != rank and m[r, c]:
                m[r] ^= m[rank]
        rank += 1
    return rank


def _gf2_solve(m: np.ndarray, target: np.ndarray):
    """Subset of rows of m summing to target (row indices), or None."""
    rows, cols = m.shape
    work = m.copy() % 2
    combo = np.eye(rows, dtype=np.uint8)
    t = target.copy() % 2
    rank = 0
    pivot_cols = []
    for c in range(cols):
        pivot = None
        for r in range(rank, rows):
            if work[r, c]:
                pivot = r
                break
        if pivot is None:
            continue
        work[[rank, pivot]] = work[[pivot, rank]]
        combo[[rank, pivot]] = combo[[pivot, rank]]
        for r in range(rows):
            if r != rank and work[r, c]:
                work[r] ^= work[rank]
                combo[r] ^= combo[rank]
        pivot_cols.append(c)
        rank += 1
    picked = np.zeros(rows, dtype=np.uint8)
    residue = t.copy()
    for idx, c in enumerate(pivot_cols):
        if residue[c]:
            picked ^= combo[idx]
            residue ^= work[idx]
    if residue.any():
        return None
    return [r for r in range(rows) if picked[r]]


# ---------------------------------------------------------------------------


def graph_state_tableau(g: GraphState) -> Tableau:
    """Generators X_i Z_{N(i)} with positive signs."""
    verts = sorted(g.vertices)
    index = {v: i for i, v in enumerate(verts)}
    t = Tableau(len(verts)) if verts else Tableau(1)
    if not verts:
        return t
    for i, v in enumerate(verts):
        t.x[i, i] = 1
        for u in g.neighbors(v):
            t.z[i, index[u]] = 1
    return t


def verify_cz_layer_teleport(g: GraphState) -> bool:
    """Exhaustively check the gate-layer transfer onto a fresh register.

    A resource copy of the state, an ancilla row and a register of plus
    states are chained with CZs; all X measurement branches of the resource
    and ancilla rows, followed by the parity corrections, must leave the
    register in exactly the graph state.
    """
    verts = sorted(g.vertices)
    n = len(verts)
    if n == 0:
        return True
    if n > 6:
        raise GsdError("exhaustive branch check limited to 6 vertices")
    index = {v: i for i, v in enumerate(verts)}
    base = Tableau.plus_state(3 * n)
    for a, b in sorted(g.edges):
        base.apply_cz(index[a], index[b])
    for i in range(n):
        base.apply_cz(i, n + i)
        base.apply_cz(n + i, 2 * n + i)
    target = graph_state_tableau(g)
    comp = list(range(2 * n, 3 * n))
    for branch in itertools.product((1, -1), repeat=2 * n):
        t = base.copy()
        m = [t.measure_x(i, forced=branch[i]) for i in range(n)]
        mp = [t.measure_x(n + i, forced=branch[n + i]) for i in range(n)]
        for v in verts:
            i = index[v]
            parity = m[i]
            for u in g.neighbors(v):
                parity *= mp[index[u]]
            if parity == -1:
                t.apply_z(2 * n + i)
        final = t.restrict(comp)
        if not final.equals_state(target):
            return False
    return True


def merged_graph(g1: GraphState, g2: GraphState, fuse_from: int, fuse_into: int,
                 offset: int) -> GraphState:
    """Graph after fusing vertex `fuse_from` of g1 into `fuse_into` of g2.

    g2's vertices are shifted by `offset` to keep the union disjoint; the
    fused vertex disappears and its neighbors attach to the target.
    """
    verts = {v for v in g1.vertices if v != fuse_from} | {v + offset for v in g2.vertices}
    edges = set()
    for a, b in g1.edges:
        if fuse_from not in (a, b):
            edges.add(channel_key(a, b))
    for a, b in g2.edges:
        edges.add(channel_key(a + offset, b + offset))
    for w in g1.neighbors(fuse_from):
        edges.add(channel_key(w, fuse_into + offset))
    return GraphState(frozenset(verts), frozenset(edges))


def verify_fusion(g1: GraphState, g2: GraphState, fuse_from: int, fuse_into: int) -> bool:
    """Check the measurement-based merge of two vertices over all branches.

    The fused vertex and a fresh ancilla are chained to the target by CZs and
    measured in X.  Byproducts: Z on the target when the fused vertex's
    outcome is -1, Z on each of its old neighbors when the ancilla's outcome
    is -1 (derived from the same parity rule as the layer transfer).
    """
    v1 = sorted(g1.vertices)
    v2 = sorted(g2.vertices)
    if len(v1) + len(v2) > 10:
        raise GsdError("fusion check limited to small states")
    offset = (max(v1) + 1) if v1 else 0
    n1, n2 = len(v1), len(v2)
    idx1 = {v: i for i, v in enumerate(v1)}
    idx2 = {v: n1 + i for i, v in enumerate(v2)}
    anc = n1 + n2
    t0 = Tableau.plus_state(n1 + n2 + 1)
    for a, b in sorted(g1.edges):
        t0.apply_cz(idx1[a], idx1[b])
    for a, b in sorted(g2.edges):
        t0.apply_cz(idx2[a], idx2[b])
    t0.apply_cz(idx1[fuse_from], anc)
    t0.apply_cz(anc, idx2[fuse_into])

    target_graph = merged_graph(g1, g2, fuse_from, fuse_into, offset)
    target = graph_state_tableau(target_graph)
    keep = [q for q in range(n1 + n2) if q != idx1[fuse_from]]
    # restrict() orders kept qubits ascending; the merged graph sorts the
    # shifted g2 vertices after g1's remainder, which matches that order
    for b1, b2 in itertools.product((1, -1), repeat=2):
        t = t0.copy()
        m_u = t.measure_x(idx1[fuse_from], forced=b1)
        m_a = t.measure_x(anc, forced=b2)
        if m_u == -1:
            t.apply_z(idx2[fuse_into])
        if m_a == -1:
            for w in g1.neighbors(fuse_from):
                t.apply_z(idx1[w])
        final = t.restrict(keep)
        if not final.equals_state(target):
            return False
    return True


def entanglement_rank(t: Tableau, side: tuple) -> int:
    """Rank-based entanglement entropy of a bipartition, in bits."""
    other = [q for q in range(t.n) if q not in side]
    m_other = np.concatenate([t.x[:, other], t.z[:, other]], axis=1)
    # |side| - (number of generators supported entirely on side)
    supported = t.n - _gf2_rank(m_other)
    return len(side) - supported
