"""Bijective mapping between quantized scene programs and integer tokens.

Sequence schema: ``START, (PART, CMD, value...)* , STOP``.  Every command
kind has a fixed arity; values encode non-negative integers ``v`` as
``16 + v``.  Lengths quantize as ``round(x / res)``, angles as whole
degrees in [0, 360), and integer fields pass through unchanged.

Vocabulary layout (2048 tokens):

====  =========================================
0-3   PAD, START, STOP, PART
4-10  command tokens (wall, door, window, bbox, prim, curved_wall, wall_prim)
11-15 reserved
16+   value tokens, ``16 + v`` with v in [0, 2031]
====  =========================================
"""

from __future__ import annotations

import numpy as np

from . import lang
from .errors import (
    MalformedSequence,
    SequenceTooLong,
    UnreachablePrefix,
    ValueOutOfRange,
)

PAD = 0
START = 1
STOP = 2
PART = 3

COMMAND_TOKENS = {
    "wall": 4,
    "door": 5,
    "window": 6,
    "bbox": 7,
    "prim": 8,
    "curved_wall": 9,
    "wall_prim": 10,
}
KIND_BY_TOKEN = {tok: kind for kind, tok in COMMAND_TOKENS.items()}

VALUE_BASE = 16
VOCAB_SIZE = 2048
VALUE_MAX = VOCAB_SIZE - 1 - VALUE_BASE  # 2031
MAX_TOKENS = 2048

_MIN_ARITY = min(spec.arity for spec in lang.KIND_SPECS.values())


def arity(kind: str) -> int:
    return lang.KIND_SPECS[kind].arity


def sequence_length(program: lang.SceneProgram) -> int:
    """Predicted token count: 2 + sum over commands of (2 + arity)."""
    return 2 + sum(2 + arity(lang.kind_of(c)) for c in program.commands)


def _encode_field(value, field, res):
    if field.ftype == lang.INT:
        v = int(value)
    elif field.ftype == lang.ANGLE:
        v = round(value / lang.ANGLE_RESOLUTION) % 360
    else:
        v = round(value / res)
    if v < 0 or v > VALUE_MAX:
        raise ValueOutOfRange(field.name, v)
    return VALUE_BASE + v


def _decode_field(v, field, res):
    if field.ftype == lang.INT:
        return v
    if field.ftype == lang.ANGLE:
        return float(v % 360) * lang.ANGLE_RESOLUTION
    return v * res


def tokenize(program: lang.SceneProgram, origin=None) -> list[int]:
    """Encode a valid, canonicalized program as a token sequence.

    The scene is first translated so its minimum coordinate is ``origin``
    (its own min corner by default), making every encoded value
    non-negative.
    """
    if origin is None:
        prog = lang.normalize_origin(program)
    else:
        prog = lang.translate(program, tuple(-o for o in origin))
    res = prog.resolution
    out = [START]
    for cmd in prog.commands:
        spec = lang.spec_of(cmd)
        out.append(PART)
        out.append(COMMAND_TOKENS[spec.kind])
        for field in spec.fields:
            out.append(_encode_field(getattr(cmd, field.name), field, res))
    out.append(STOP)
    if len(out) > MAX_TOKENS:
        raise SequenceTooLong(f"{len(out)} tokens exceed the {MAX_TOKENS} cap")
    return out


def _build_command(kind, values, res):
    spec = lang.KIND_SPECS[kind]
    kwargs = {
        field.name: _decode_field(v, field, res)
        for field, v in zip(spec.fields, values)
    }
    return spec.cls(**kwargs)


def detokenize(seq, resolution: float = lang.DEFAULT_RESOLUTION) -> lang.SceneProgram:
    """Strictly reconstruct the quantized program encoded by ``seq``."""
    if len(seq) > MAX_TOKENS:
        raise SequenceTooLong(f"{len(seq)} tokens exceed the {MAX_TOKENS} cap")
    if not seq or seq[0] != START:
        raise MalformedSequence(0, "START", seq[0] if seq else "nothing")
    commands = []
    i = 1
    while True:
        if i >= len(seq):
            raise MalformedSequence(i, "PART or STOP", "end of sequence")
        tok = seq[i]
        if tok == STOP:
            if i != len(seq) - 1:
                raise MalformedSequence(i + 1, "end of sequence", seq[i + 1])
            break
        if tok != PART:
            raise MalformedSequence(i, "PART or STOP", tok)
        i += 1
        if i >= len(seq) or seq[i] not in KIND_BY_TOKEN:
            raise MalformedSequence(
                i, "command token", seq[i] if i < len(seq) else "end of sequence"
            )
        kind = KIND_BY_TOKEN[seq[i]]
        i += 1
        n = arity(kind)
        if i + n > len(seq):
            raise MalformedSequence(len(seq), f"{n} value tokens", "end of sequence")
        values = []
        for k in range(n):
            tok = seq[i + k]
            if tok < VALUE_BASE:
                raise MalformedSequence(i + k, "value token", tok)
            values.append(tok - VALUE_BASE)
        commands.append(_build_command(kind, values, resolution))
        i += n
    return lang.SceneProgram(tuple(commands), resolution)


def detokenize_lenient(
    seq, resolution: float = lang.DEFAULT_RESOLUTION
) -> tuple[lang.SceneProgram, int]:
    """Best-effort decode of a possibly malformed sequence.

    Commands whose bodies are malformed or truncated are skipped; returns
    the recovered program and the number of skipped command bodies.
    """
    commands = []
    skipped = 0
    i = 1 if (seq and seq[0] == START) else 0
    n = len(seq)
    while i < n:
        tok = seq[i]
        if tok == STOP:
            break
        if tok != PART:
            i += 1
            continue
        i += 1
        if i >= n or seq[i] not in KIND_BY_TOKEN:
            skipped += 1
            continue
        kind = KIND_BY_TOKEN[seq[i]]
        i += 1
        k = arity(kind)
        body = seq[i : i + k]
        if len(body) < k or any(t < VALUE_BASE for t in body):
            skipped += 1
            # resync at the next PART/STOP rather than consuming the body
            while i < n and seq[i] not in (PART, STOP):
                i += 1
            continue
        commands.append(
            _build_command(kind, [t - VALUE_BASE for t in body], resolution)
        )
        i += k
    return lang.SceneProgram(tuple(commands), resolution), skipped


class GrammarCursor:
    """Incremental grammar state for one growing token sequence."""

    __slots__ = ("state", "need", "length")

    def __init__(self):
        self.state = "start"
        self.need = 0
        self.length = 0

    def advance(self, tok: int):
        pos = self.length
        if self.state == "start":
            if tok != START:
                raise UnreachablePrefix("sequence must begin with START")
            self.state = "boundary"
        elif self.state == "boundary":
            if tok == PART:
                self.state = "command"
            elif tok == STOP:
                self.state = "done"
            else:
                raise UnreachablePrefix(f"position {pos}: expected PART or STOP")
        elif self.state == "command":
            if tok not in KIND_BY_TOKEN:
                raise UnreachablePrefix(f"position {pos}: expected a command token")
            self.need = arity(KIND_BY_TOKEN[tok])
            self.state = "body"
        elif self.state == "body":
            if not VALUE_BASE <= tok < VOCAB_SIZE:
                raise UnreachablePrefix(f"position {pos}: expected a value token")
            self.need -= 1
            if self.need == 0:
                self.state = "boundary"
        else:
            raise UnreachablePrefix(f"position {pos}: token after STOP")
        self.length += 1
        return self

    def mask(self, max_len: int = MAX_TOKENS) -> np.ndarray:
        """Tokens extendable to a well-formed sequence within ``max_len``."""
        out = np.zeros(VOCAB_SIZE, dtype=bool)
        remaining = max_len - self.length
        if remaining <= 0:
            return out
        if self.state == "start":
            out[START] = True
        elif self.state == "boundary":
            out[STOP] = True
            # room for PART + CMD + smallest body + STOP
            if remaining >= 3 + _MIN_ARITY:
                out[PART] = True
        elif self.state == "command":
            for kind, tok in COMMAND_TOKENS.items():
                if remaining >= 2 + arity(kind):  # body + STOP
                    out[tok] = True
        elif self.state == "body":
            # committed: the remaining body plus STOP always fits
            out[VALUE_BASE:] = True
        return out


def valid_next_tokens(prefix, max_len: int = MAX_TOKENS) -> np.ndarray:
    """Boolean mask over the vocabulary of tokens that keep ``prefix`` extendable
    to a well-formed sequence no longer than ``max_len``."""
    cursor = GrammarCursor()
    for tok in prefix:
        cursor.advance(int(tok))
    return cursor.mask(max_len)


def _partition(tok: int) -> str:
    if tok < 4:
        return "special"
    if tok <= 10:
        return "command"
    if tok < VALUE_BASE:
        return "reserved"
    return "value"


def token_accuracy_slack(pred, gt, slack: int = 0) -> float:
    """Index-aligned token accuracy with +-slack credit on value tokens.

    Special and command tokens must match exactly; value tokens count as
    correct when within ``slack`` integer steps.  The denominator is the
    longer of the two sequences.
    """
    if not pred and not gt:
        return 1.0
    correct = 0
    for p, g in zip(pred, gt):
        if _partition(p) != _partition(g):
            continue
        if _partition(p) == "value":
            if abs(p - g) <= slack:
                correct += 1
        elif p == g:
            correct += 1
    return correct / max(len(pred), len(gt))


def write_token_file(path, sequences):
    """One sequence per line, ASCII integers separated by single spaces."""
    with open(path, "w", encoding="utf-8") as fh:
        for seq in sequences:
            fh.write(" ".join(str(t) for t in seq) + "\n")


def read_token_file(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append([int(t) for t in line.split()])
    return out
