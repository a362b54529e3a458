"""Run-length coded stochastic multi-indices and maps keyed by them.

A multi-index nu is a finitely supported sequence of nonnegative integers
over coordinates 1, 2, 3, ...  It is stored as a tuple of nonzero signed
integers: a negative entry -m stands for a run of m zeros, a positive entry
is a value.  Runs are maximal (no two consecutive negative entries) and
trailing zeros are never stored, so the code of an index is unique and can
be used directly as a dictionary key.  The zero index has the empty code.
"""

from __future__ import annotations

MAX_ENTRY = 2**31 - 1

# Instrumentation counters for the cost model (units roughly proportional
# to the work done); enabled only when tests ask for them.
OP_COUNTS = {"encode": 0, "decode": 0, "shift": 0}
_COUNTING = False


def enable_op_counting(flag=True):
    global _COUNTING
    _COUNTING = flag
    for k in OP_COUNTS:
        OP_COUNTS[k] = 0


def _count(name, units):
    if _COUNTING:
        OP_COUNTS[name] += units


class InvalidIndexError(ValueError):
    """Raised for negative entries, overflow, or malformed codes."""


def _entries_to_code(entries):
    """Build a canonical code from sorted (position, value) pairs."""
    code = []
    prev = 0
    for pos, val in entries:
        gap = pos - prev - 1
        if gap > 0:
            code.append(-gap)
        code.append(val)
        prev = pos
    return tuple(code)


class MultiIndex:
    """Immutable run-length coded multi-index."""

    __slots__ = ("code", "_hash")

    def __init__(self, code=()):
        code = tuple(code)
        prev_neg = True  # forbids a leading run only if it is doubled
        first = True
        for m in code:
            if m == 0:
                raise InvalidIndexError("zero entry in code")
            if m < 0:
                if prev_neg and not first:
                    raise InvalidIndexError("two consecutive runs")
                prev_neg = True
            else:
                if m > MAX_ENTRY:
                    raise InvalidIndexError("entry exceeds cap")
                prev_neg = False
            first = False
        if code and code[-1] < 0:
            raise InvalidIndexError("trailing run of zeros")
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "_hash", hash(code))

    def __setattr__(self, name, value):
        raise AttributeError("MultiIndex is immutable")

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero():
        return _ZERO

    @staticmethod
    def encode(dense):
        """Canonical index from a dense sequence of nonnegative ints."""
        entries = []
        for i, v in enumerate(dense):
            v = int(v)
            if v < 0:
                raise InvalidIndexError("negative entry %d" % v)
            if v:
                entries.append((i + 1, v))
        _count("encode", len(dense) and len(entries) + 1)
        return MultiIndex(_entries_to_code(entries))

    @staticmethod
    def unit(mu):
        """Kronecker index e_mu for coordinate mu >= 1."""
        if mu < 1:
            raise InvalidIndexError("coordinates are 1-based")
        return MultiIndex(_entries_to_code([(mu, 1)]))

    @staticmethod
    def from_entries(entries):
        """Index from (position, value) pairs; positions 1-based, values > 0."""
        entries = sorted(entries)
        for pos, val in entries:
            if pos < 1 or val <= 0:
                raise InvalidIndexError("bad entry (%d, %d)" % (pos, val))
        return MultiIndex(_entries_to_code(entries))

    # -- accessors ----------------------------------------------------

    def entries(self):
        """Sorted tuple of (position, value) pairs; the canonical sort key."""
        out = []
        pos = 0
        for m in self.code:
            if m < 0:
                pos -= m
            else:
                pos += 1
                out.append((pos, m))
        _count("decode", len(self.code) + 1)
        return tuple(out)

    def decode(self):
        """Dense tuple up to the last nonzero coordinate."""
        ent = self.entries()
        if not ent:
            return ()
        dense = [0] * ent[-1][0]
        for pos, val in ent:
            dense[pos - 1] = val
        return tuple(dense)

    def __getitem__(self, mu):
        pos = 0
        for m in self.code:
            if m < 0:
                pos -= m
                if mu <= pos:
                    return 0
            else:
                pos += 1
                if mu == pos:
                    return m
                if mu < pos:
                    return 0
        return 0

    def support_size(self):
        return sum(1 for m in self.code if m > 0)

    def dimension(self):
        pos = 0
        for m in self.code:
            pos += -m if m < 0 else 1
        return pos

    def total_order(self):
        return sum(m for m in self.code if m > 0)

    def is_zero(self):
        return not self.code

    def shift(self, mu, direction):
        """nu + e_mu (direction=+1) or nu - e_mu (-1); None if not defined."""
        if mu < 1:
            raise InvalidIndexError("coordinates are 1-based")
        ent = list(self.entries())
        _count("shift", len(ent) + 1)
        for i, (pos, val) in enumerate(ent):
            if pos == mu:
                val += direction
                if val < 0:
                    return None
                if val == 0:
                    del ent[i]
                else:
                    ent[i] = (pos, val)
                break
            if pos > mu:
                if direction < 0:
                    return None
                ent.insert(i, (mu, 1))
                break
        else:
            if direction < 0:
                return None
            ent.append((mu, 1))
        return MultiIndex(_entries_to_code(ent))

    # -- ordering / identity -------------------------------------------

    def sort_key(self):
        return self.entries()

    def __eq__(self, other):
        return isinstance(other, MultiIndex) and self.code == other.code

    def __hash__(self):
        return self._hash

    def __lt__(self, other):
        return self.entries() < other.entries()

    def __repr__(self):
        body = ",".join("%d:%d" % e for e in self.entries())
        return "nu{%s}" % body


_ZERO = MultiIndex(())


class IndexMap:
    """Finite map keyed by MultiIndex with deterministic iteration order.

    Iteration is sorted by the canonical (position, value) key so that runs
    are reproducible regardless of insertion order.
    """

    __slots__ = ("_data", "_sorted")

    def __init__(self, items=()):
        self._data = {}
        self._sorted = None
        for k, v in items:
            self[k] = v

    def __setitem__(self, key, value):
        if key not in self._data:
            self._sorted = None
        self._data[key] = value

    def __getitem__(self, key):
        return self._data[key]

    def get(self, key, default=None):
        return self._data.get(key, default)

    def __contains__(self, key):
        return key in self._data

    def __delitem__(self, key):
        del self._data[key]
        self._sorted = None

    def __len__(self):
        return len(self._data)

    def keys(self):
        if self._sorted is None:
            self._sorted = sorted(self._data, key=MultiIndex.sort_key)
        return list(self._sorted)

    def __iter__(self):
        return iter(self.keys())

    def items(self):
        return [(k, self._data[k]) for k in self.keys()]

    def values(self):
        return [self._data[k] for k in self.keys()]
