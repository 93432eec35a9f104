"""Architecture DSL: parse, validate, and render layer lists.

An architecture is an ordered list of kernel-space layers applied after the
implicit input kernel.  The text format has one layer per line::

    conv 3      # 3x3 convolution (half-width 1)
    relu        # arccosine / rectifier embedding
    pool 2      # 2x2 average pooling
    gauss       # normalized Gaussian embedding
    gpool       # global average pooling to 1x1

Blank lines and ``#`` comments are ignored.  Parsing and rendering are exact
inverses on valid architectures.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field


class LayerKind(enum.Enum):
    """Discriminator for the five layer types the DSL can name."""

    CONV = "conv"
    POOL = "pool"
    RELU_EMBED = "relu"
    GAUSS_EMBED = "gauss"
    GLOBAL_POOL = "gpool"


class ArchError(ValueError):
    """Base class for architecture parsing and validation failures."""


class ArchSyntaxError(ArchError):
    """A line of architecture text could not be parsed.

    Parameters
    ----------
    message : str
        Human-readable description of the problem.
    line : int
        1-based line number in the source text.
    """

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class EvenConvSizeError(ArchSyntaxError):
    """A ``conv`` layer was declared with an even side length."""


class PoolSizeError(ArchSyntaxError):
    """A ``pool`` layer was declared with width < 2."""


class UnknownTokenError(ArchSyntaxError):
    """A line begins with a token that is not part of the grammar."""


class PoolIndivisibleError(ArchError):
    """A pooling layer does not divide the current spatial dimensions.

    Parameters
    ----------
    layer_index : int
        0-based index of the offending layer in ``ArchSpec.layers``.
    width : int
        The pooling width.
    spatial : tuple of int
        Spatial dimensions at the point the pool is applied.
    """

    def __init__(self, layer_index: int, width: int, spatial: tuple[int, int]):
        super().__init__(
            f"layer {layer_index}: pool {width} does not divide "
            f"spatial dims {spatial[0]}x{spatial[1]}"
        )
        self.layer_index = layer_index
        self.width = width
        self.spatial = spatial


@dataclass(frozen=True)
class LayerDesc:
    """One layer of an architecture.

    Parameters
    ----------
    kind : LayerKind
        Which operator the layer applies.
    size : int, default=1
        For ``CONV``: the odd kernel side length (3 means half-width 1).
        For ``POOL``: the pooling width.  Unused (1) for the other kinds.
    """

    kind: LayerKind
    size: int = 1

    def __post_init__(self):
        if self.kind is LayerKind.CONV:
            if self.size < 3 or self.size % 2 == 0:
                raise ValueError(
                    f"conv size must be an odd integer >= 3, got {self.size}"
                )
        elif self.kind is LayerKind.POOL:
            if self.size < 2:
                raise ValueError(f"pool width must be >= 2, got {self.size}")

    @property
    def half_width(self) -> int:
        """Half-width w of a convolution (side length 3 => w = 1)."""
        if self.kind is not LayerKind.CONV:
            raise AttributeError("half_width is defined for conv layers only")
        return (self.size - 1) // 2


@dataclass(frozen=True)
class ArchSpec:
    """A validated, ordered list of layers.

    The input kernel is implicit at position 0 and never appears in
    ``layers``.  An empty layer list denotes the bare input kernel.

    Parameters
    ----------
    layers : tuple of LayerDesc
        Layers in application order.
    name : str, default=""
        Optional human-readable name (e.g. the source file stem).
    """

    layers: tuple[LayerDesc, ...] = ()
    name: str = ""

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class ValidationReport:
    """Result of simulating an architecture's spatial dimensions.

    Parameters
    ----------
    final_spatial : tuple of int
        Spatial dimensions after the last layer.
    flattens_to_scalar : bool
        True when ``final_spatial == (1, 1)``, i.e. the composed kernel of a
        dataset pair is an ordinary Gram matrix.
    stage_spatial : tuple of tuple of int
        Spatial dimensions at every stage boundary; entry 0 is the input
        dimensions and entry ``i + 1`` follows ``layers[i]``.
    """

    final_spatial: tuple[int, int]
    flattens_to_scalar: bool
    stage_spatial: tuple[tuple[int, int], ...] = field(default=())


def parse_arch(text: str, name: str = "") -> ArchSpec:
    """Parse architecture text into an :class:`ArchSpec`.

    Parameters
    ----------
    text : str
        One layer per line; ``#`` comments and blank lines are skipped.
    name : str, default=""
        Name recorded on the returned spec.

    Returns
    -------
    ArchSpec
        One :class:`LayerDesc` per non-comment line, in file order.

    Raises
    ------
    EvenConvSizeError
        If a conv layer has an even (or <3) side length.
    PoolSizeError
        If a pool layer has width < 2.
    UnknownTokenError
        If a line starts with an unrecognized token.
    ArchSyntaxError
        For malformed arguments (missing/extra/non-integer).
    """
    layers: list[LayerDesc] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head, args = tokens[0], tokens[1:]
        if head == "conv":
            size = _parse_int_arg("conv", args, lineno)
            if size % 2 == 0 or size < 3:
                raise EvenConvSizeError(
                    f"conv size must be an odd integer >= 3, got {size}", lineno
                )
            layers.append(LayerDesc(LayerKind.CONV, size))
        elif head == "pool":
            width = _parse_int_arg("pool", args, lineno)
            if width < 2:
                raise PoolSizeError(f"pool width must be >= 2, got {width}", lineno)
            layers.append(LayerDesc(LayerKind.POOL, width))
        elif head in ("relu", "gauss", "gpool"):
            if args:
                raise ArchSyntaxError(f"'{head}' takes no arguments", lineno)
            kind = {
                "relu": LayerKind.RELU_EMBED,
                "gauss": LayerKind.GAUSS_EMBED,
                "gpool": LayerKind.GLOBAL_POOL,
            }[head]
            layers.append(LayerDesc(kind))
        else:
            raise UnknownTokenError(f"unknown token '{head}'", lineno)
    return ArchSpec(layers=tuple(layers), name=name)


def _parse_int_arg(head: str, args: list[str], lineno: int) -> int:
    if len(args) != 1:
        raise ArchSyntaxError(
            f"'{head}' takes exactly one integer argument, got {len(args)}", lineno
        )
    try:
        value = int(args[0])
    except ValueError:
        raise ArchSyntaxError(
            f"'{head}' argument must be an integer, got '{args[0]}'", lineno
        ) from None
    if value <= 0:
        raise ArchSyntaxError(f"'{head}' argument must be positive, got {value}", lineno)
    return value


def validate_arch(spec: ArchSpec, spatial: tuple[int, int]) -> ValidationReport:
    """Simulate spatial dimensions through an architecture.

    Pooling requires divisibility and divides the dimensions; global pooling
    sets them to 1x1; convolutions and embeddings preserve them.

    Parameters
    ----------
    spec : ArchSpec
        The architecture to check.
    spatial : tuple of int
        Input spatial dimensions ``(D1, D2)``, both >= 1.

    Returns
    -------
    ValidationReport
        Final dimensions, the ``flattens_to_scalar`` flag, and per-stage dims.

    Raises
    ------
    PoolIndivisibleError
        When a pool width does not divide the current dimensions.
    """
    d1, d2 = spatial
    if d1 < 1 or d2 < 1:
        raise ArchError(f"spatial dims must be >= 1, got {spatial}")
    stages: list[tuple[int, int]] = [(d1, d2)]
    for index, layer in enumerate(spec.layers):
        if layer.kind is LayerKind.POOL:
            w = layer.size
            if d1 % w != 0 or d2 % w != 0:
                raise PoolIndivisibleError(index, w, (d1, d2))
            d1, d2 = d1 // w, d2 // w
        elif layer.kind is LayerKind.GLOBAL_POOL:
            d1, d2 = 1, 1
        stages.append((d1, d2))
    return ValidationReport(
        final_spatial=(d1, d2),
        flattens_to_scalar=(d1, d2) == (1, 1),
        stage_spatial=tuple(stages),
    )


def render_arch(spec: ArchSpec) -> str:
    """Render an architecture to canonical text.

    The canonical form uses a single space between token and argument and one
    trailing newline per layer, so ``parse_arch(render_arch(s)) == s`` for
    every valid spec.

    Parameters
    ----------
    spec : ArchSpec

    Returns
    -------
    str
        Canonical architecture text; ``""`` for the empty architecture.
    """
    lines = []
    for layer in spec.layers:
        if layer.kind is LayerKind.CONV:
            lines.append(f"conv {layer.size}\n")
        elif layer.kind is LayerKind.POOL:
            lines.append(f"pool {layer.size}\n")
        else:
            lines.append(f"{layer.kind.value}\n")
    return "".join(lines)


def load_arch(path) -> ArchSpec:
    """Read and parse an architecture file.

    Parameters
    ----------
    path : str or pathlib.Path
        File containing architecture text.

    Returns
    -------
    ArchSpec
        Parsed spec named after the file stem.
    """
    from pathlib import Path

    p = Path(path)
    return parse_arch(p.read_text(), name=p.stem)
