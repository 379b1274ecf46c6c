"""
Restricted arithmetic expressions for config-defined coefficients.

Grammar: + - * / with parentheses, powers (^ or **), unary minus, the
functions sin, cos, exp, log, sqrt, the constants pi and e, and the state
variables x1..xn (plain x is accepted for x1 in 1D).  Parsed into a small
AST and evaluated with numpy, so coefficient fields built from expressions
are vectorized like the hand-written ones.  Nothing is ever eval()'d.
"""
from __future__ import annotations

import re

import numpy as np

from .errors import ConfigError
from .model import SystemSpec

_FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
}

_CONSTANTS = {"pi": np.pi, "e": np.e}

_TOKEN = re.compile(r"""
    (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<power>\*\*|\^)
  | (?P<op>[+\-*/()])
  | (?P<space>\s+)
""", re.VERBOSE)


def _tokenize(text):
    tokens = []
    pos = 0
    while pos < len(text):
        match = _TOKEN.match(text, pos)
        if match is None:
            raise ConfigError(
                f"bad character {text[pos]!r} at position {pos} in "
                f"expression {text!r}")
        pos = match.end()
        if match.lastgroup == "space":
            continue
        if match.lastgroup == "power":
            tokens.append(("op", "^"))
        else:
            tokens.append((match.lastgroup, match.group()))
    tokens.append(("end", ""))
    return tokens


class _Parser:
    """Recursive descent over the token list; emits nested closures."""

    def __init__(self, text, dim):
        self.text = text
        self.dim = dim
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos]

    def take(self, kind=None, value=None):
        tok = self.tokens[self.pos]
        if kind is not None and tok[0] != kind:
            raise ConfigError(
                f"expected {kind} at token {self.pos} in {self.text!r}, "
                f"got {tok[1]!r}")
        if value is not None and tok[1] != value:
            raise ConfigError(
                f"expected {value!r} in {self.text!r}, got {tok[1]!r}")
        self.pos += 1
        return tok

    def parse(self):
        node = self.expr()
        if self.peek()[0] != "end":
            raise ConfigError(
                f"unexpected trailing {self.peek()[1]!r} in {self.text!r}")
        return node

    def expr(self):
        node = self.term()
        while self.peek() == ("op", "+") or self.peek() == ("op", "-"):
            op = self.take()[1]
            rhs = self.term()
            node = (lambda a, b: lambda v: a(v) + b(v))(node, rhs) \
                if op == "+" else \
                (lambda a, b: lambda v: a(v) - b(v))(node, rhs)
        return node

    def term(self):
        node = self.unary()
        while self.peek() == ("op", "*") or self.peek() == ("op", "/"):
            op = self.take()[1]
            rhs = self.unary()
            node = (lambda a, b: lambda v: a(v) * b(v))(node, rhs) \
                if op == "*" else \
                (lambda a, b: lambda v: a(v) / b(v))(node, rhs)
        return node

    def unary(self):
        if self.peek() == ("op", "-"):
            self.take()
            inner = self.unary()
            return lambda v: -inner(v)
        if self.peek() == ("op", "+"):
            self.take()
            return self.unary()
        return self.power()

    def power(self):
        base = self.atom()
        if self.peek() == ("op", "^"):
            self.take()
            exponent = self.unary()   # right-associative
            return lambda v: base(v) ** exponent(v)
        return base

    def atom(self):
        kind, value = self.peek()
        if kind == "number":
            self.take()
            const = float(value)
            return lambda v: const
        if kind == "name":
            self.take()
            if value in _FUNCTIONS:
                self.take("op", "(")
                arg = self.expr()
                self.take("op", ")")
                fn = _FUNCTIONS[value]
                return lambda v: fn(arg(v))
            if value in _CONSTANTS:
                const = _CONSTANTS[value]
                return lambda v: const
            return self.variable(value)
        if (kind, value) == ("op", "("):
            self.take()
            node = self.expr()
            self.take("op", ")")
            return node
        raise ConfigError(f"unexpected {value!r} in {self.text!r}")

    def variable(self, name):
        if name == "x" and self.dim == 1:
            index = 0
        elif re.fullmatch(r"x[1-9]\d*", name):
            index = int(name[1:]) - 1
        else:
            known = ", ".join(sorted(_FUNCTIONS) + sorted(_CONSTANTS))
            raise ConfigError(
                f"unknown name {name!r} in {self.text!r}; variables are "
                f"x1..x{self.dim}, known names: {known}")
        if index >= self.dim:
            raise ConfigError(
                f"variable {name!r} exceeds dimension {self.dim}")
        return lambda v: v[index]


def parse_expression(text, dim):
    """Compile an expression into fn(points) over (..., dim) arrays."""
    if not isinstance(text, str):
        raise ConfigError(f"expression must be a string, got {text!r}")
    node = _Parser(text, dim).parse()

    def evaluate(points):
        points = np.asarray(points, dtype=float)
        per_axis = [points[..., i] for i in range(dim)]
        value = node(per_axis)
        return np.broadcast_to(value, points.shape[:-1]).astype(float) \
            if np.ndim(value) == 0 else value

    return evaluate


def system_from_config(spec):
    """Build a SystemSpec from an inline config mapping.

    Required keys: dim, drift (list of dim expressions), noise (dim x
    noise_dim nested list of expressions), domain ([[lo, hi], ...]),
    boundary (list of kinds).  Optional: noise_dim (default dim), name.
    Derivatives fall back to finite differences.
    """
    if not isinstance(spec, dict):
        raise ConfigError("inline system must be a mapping")
    allowed = {"dim", "noise_dim", "drift", "noise", "domain", "boundary",
               "name"}
    for key in spec:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in system definition")
    for key in ("dim", "drift", "noise", "domain", "boundary"):
        if key not in spec:
            raise ConfigError(f"system definition is missing {key!r}")
    dim = int(spec["dim"])
    noise_dim = int(spec.get("noise_dim", dim))
    drift_exprs = spec["drift"]
    noise_exprs = spec["noise"]
    if len(drift_exprs) != dim:
        raise ConfigError(f"drift needs {dim} expressions")
    if len(noise_exprs) != dim or any(len(row) != noise_dim
                                      for row in noise_exprs):
        raise ConfigError(f"noise needs a {dim} x {noise_dim} table")
    drift_fns = [parse_expression(e, dim) for e in drift_exprs]
    noise_fns = [[parse_expression(e, dim) for e in row]
                 for row in noise_exprs]

    def drift(points):
        points = np.asarray(points, dtype=float)
        out = np.empty(points.shape)
        for i, fn in enumerate(drift_fns):
            out[..., i] = fn(points)
        return out

    def noise(points):
        points = np.asarray(points, dtype=float)
        out = np.empty(points.shape[:-1] + (dim, noise_dim))
        for i, row in enumerate(noise_fns):
            for k, fn in enumerate(row):
                out[..., i, k] = fn(points)
        return out

    return SystemSpec(dim=dim, noise_dim=noise_dim, drift=drift,
                      noise=noise, domain=spec["domain"],
                      boundary=tuple(spec["boundary"]),
                      name=str(spec.get("name", "inline")))
