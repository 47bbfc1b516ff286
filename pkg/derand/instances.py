"""
Plain-text instance formats.

* ``matrix m n nnz`` followed by ``nnz`` lines ``i j w``
* ``sets n m`` followed by ``m`` lines of element indices
* ``graph n edges`` followed by ``edges`` lines ``u v``

Indices are zero-based and weights positive decimals.
"""
import logging
import math
import os
import re
from collections.abc import Callable, Iterable
from typing import TextIO

import numpy as np

from derand.applications import Graph, SetSystem
from derand.error import InvalidArgument, ParseError
from derand.matrix import ConstraintMatrix

logger = logging.getLogger(__name__)

Instance = ConstraintMatrix | SetSystem | Graph

TOKEN = re.compile(r"\S+")

class _Line:
    def __init__ (self, number: int, text: str):
        self.number = number
        self.tokens = [(match.group(), match.start() + 1) for match in TOKEN.finditer(text)]

    def error (self, message: str, token: int = 0) -> ParseError:
        column = self.tokens[token][1] if token < len(self.tokens) else 1
        return ParseError(message, self.number, column)

    def integer (self, token: int, low: int = 0, high: int | None = None) -> int:
        text, _ = self.tokens[token]
        try:
            value = int(text)

        except ValueError:
            raise self.error(f"expected an integer, got {text!r}", token) from None

        if value < low or (high is not None and value >= high):
            bound = f"[{low}, {high})" if high is not None else f">= {low}"
            raise self.error(f"value {value} outside {bound}", token)

        return value

    def weight (self, token: int) -> float:
        text, _ = self.tokens[token]
        try:
            value = float(text)

        except ValueError:
            raise self.error(f"expected a decimal weight, got {text!r}", token) from None

        if not math.isfinite(value) or value <= 0:
            raise self.error(f"weight {text} must be positive and finite", token)

        return value

    def expect (self, count: int):
        if len(self.tokens) != count:
            raise self.error(f"expected {count} fields, got {len(self.tokens)}")

def _body (lines: list[_Line], count: int, header: _Line, skip_blank: bool = True) -> list[_Line]:
    if skip_blank:
        lines = [line for line in lines if line.tokens]

    body, rest = lines[:count], lines[count:]
    if len(body) < count:
        raise header.error(f"header announces {count} records, found {len(body)}")

    extra = [line for line in rest if line.tokens]
    if extra:
        raise extra[0].error("unexpected line after the announced records")

    return body

def _parse_matrix (header: _Line, lines: list[_Line]) -> ConstraintMatrix:
    header.expect(4)
    m, n, nnz = header.integer(1), header.integer(2), header.integer(3)

    rows, cols, weights = np.zeros(nnz, np.int64), np.zeros(nnz, np.int64), np.zeros(nnz)
    seen: dict[tuple[int, int], int] = {}

    for index, line in enumerate(_body(lines, nnz, header)):
        line.expect(3)
        i, j = line.integer(0, 0, m), line.integer(1, 0, n)
        if (i, j) in seen:
            raise line.error(f"duplicate entry ({i}, {j}), first given on line {seen[i, j]}")

        seen[i, j] = line.number
        rows[index], cols[index], weights[index] = i, j, line.weight(2)

    return ConstraintMatrix.from_entries(m, n, rows, cols, weights)

def _parse_sets (header: _Line, lines: list[_Line]) -> SetSystem:
    header.expect(3)
    n, m = header.integer(1), header.integer(2)

    sets = []
    for line in _body(lines, m, header, skip_blank=False):
        members = [line.integer(token, 0, n) for token in range(len(line.tokens))]
        if len(set(members)) != len(members):
            raise line.error("set repeats an element")

        sets.append(members)

    return SetSystem(n, sets)

def _parse_graph (header: _Line, lines: list[_Line]) -> Graph:
    header.expect(3)
    n, count = header.integer(1), header.integer(2)

    edges = []
    for line in _body(lines, count, header):
        line.expect(2)
        u, v = line.integer(0, 0, n), line.integer(1, 0, n)
        if u == v:
            raise line.error(f"self-loop at vertex {u}")

        edges.append((u, v))

    return Graph(n, edges)

PARSERS: dict[str, Callable[[_Line, list[_Line]], Instance]] = {
    "matrix": _parse_matrix,
    "sets": _parse_sets,
    "graph": _parse_graph,
}

def parse_instance_text (text: str) -> Instance:
    """
    Parses an instance from its text.

    :raises ParseError: With the line and column of the first problem
    """
    lines = [_Line(number, raw) for number, raw in enumerate(text.splitlines(), start=1)]
    while lines and not lines[0].tokens:
        lines.pop(0)

    if not lines:
        raise ParseError("empty instance", 1)

    header = lines[0]
    kind = header.tokens[0][0]
    if kind not in PARSERS:
        raise header.error(f"unknown instance kind {kind!r}, expected one of {sorted(PARSERS)}")

    try:
        return PARSERS[kind](header, lines[1:])

    except IndexError:
        raise header.error("incomplete header") from None

    except InvalidArgument as error:
        raise header.error(error.message) from None

def parse_instance (source: str | os.PathLike | TextIO) -> Instance:
    """
    Reads an instance from a path or an open stream.
    """
    if hasattr(source, "read"):
        return parse_instance_text(source.read())

    with open(source, encoding="utf-8") as handle:
        return parse_instance_text(handle.read())

def _lines (header: str, records: Iterable[str]) -> str:
    return "\n".join([header, *records]) + "\n"

def format_instance (instance: Instance) -> str:
    """
    Text form of an instance, weights in shortest round-trip decimal.
    """
    match instance:
        case ConstraintMatrix():
            records = (
                f"{i} {j} {float(w)!r}" for i, j, w in
                zip(instance.entry_rows, instance.entry_cols, instance.weights)
            )
            return _lines(f"matrix {instance.m} {instance.n} {instance.nnz}", records)

        case SetSystem():
            records = (" ".join(map(str, members)) for members in instance.sets)
            return _lines(f"sets {instance.n} {instance.m}", records)

        case Graph():
            edges = sorted({ (min(u, v), max(u, v)) for u, v in instance.edges })
            records = (f"{u} {v}" for u, v in edges)
            return _lines(f"graph {instance.vertex_count} {len(edges)}", records)

    raise InvalidArgument(f"Cannot format {type(instance).__name__}")

def parse_vector (source: str | os.PathLike | TextIO, length: int | None = None) -> np.ndarray:
    """
    One decimal per nonblank line.

    :raises ParseError: On malformed values or a length mismatch
    """
    if hasattr(source, "read"):
        text = source.read()

    else:
        with open(source, encoding="utf-8") as handle:
            text = handle.read()

    values = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = _Line(number, raw)
        if not line.tokens:
            continue

        line.expect(1)
        try:
            values.append(float(line.tokens[0][0]))

        except ValueError:
            raise line.error(f"expected a number, got {line.tokens[0][0]!r}") from None

    if length is not None and len(values) != length:
        raise ParseError(f"expected {length} values, got {len(values)}", len(text.splitlines()) + 1)

    return np.array(values, dtype=np.float64)

def format_vector (values: np.ndarray) -> str:
    """
    One value per line; integral vectors are written as integers.
    """
    values = np.asarray(values)
    if np.issubdtype(values.dtype, np.integer) or np.all(values == np.round(values)):
        return "".join(f"{int(value)}\n" for value in values)

    return "".join(f"{float(value)!r}\n" for value in values)
