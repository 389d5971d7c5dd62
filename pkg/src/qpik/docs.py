"""Location-aware reading of the YAML chain and scenario documents.

Values are pulled out of the composed YAML node graph rather than the plain
``yaml.safe_load`` result so that every error can name the line and the field
path it came from.
"""

import numpy as np
import yaml


class DocumentError(ValueError):
    """Malformed or invalid document. ``str()`` carries ``source:line:col``."""

    def __init__(self, message, source="<string>", line=None, column=None, field=None):
        self.source = source
        self.line = line
        self.column = column
        self.field = field
        where = source
        if line is not None:
            where += f":{line}:{column}"
        if field:
            message = f"field '{field}': {message}"
        super().__init__(f"{where}: {message}")


class DocNode:
    """Thin wrapper over a composed YAML node that remembers its field path."""

    def __init__(self, node, source, path=""):
        self.node = node
        self.source = source
        self.path = path

    @classmethod
    def parse(cls, text, source="<string>"):
        try:
            node = yaml.compose(text, Loader=yaml.SafeLoader)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            col = mark.column + 1 if mark is not None else None
            raise DocumentError(f"parse error: {getattr(exc, 'problem', exc)}", source, line, col) from exc
        if node is None:
            raise DocumentError("empty document", source, 1, 1)
        return cls(node, source)

    @classmethod
    def from_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read(), str(path))

    # -- error helpers -----------------------------------------------------
    @property
    def line(self):
        return self.node.start_mark.line + 1

    def error(self, message):
        return DocumentError(message, self.source, self.line, self.node.start_mark.column + 1, self.path or None)

    def _child_path(self, key):
        if isinstance(key, int):
            return f"{self.path}[{key}]"
        return f"{self.path}.{key}" if self.path else str(key)

    # -- structure ---------------------------------------------------------
    def is_mapping(self):
        return isinstance(self.node, yaml.MappingNode)

    def is_scalar(self):
        return isinstance(self.node, yaml.ScalarNode)

    def keys(self):
        self._expect_mapping()
        return [k.value for k, _ in self.node.value]

    def _expect_mapping(self):
        if not self.is_mapping():
            raise self.error("expected a mapping")

    def has(self, key):
        return key in self.keys()

    def __getitem__(self, key):
        self._expect_mapping()
        for k, v in self.node.value:
            if k.value == key:
                return DocNode(v, self.source, self._child_path(key))
        raise self.error(f"missing required field '{key}'")

    def get(self, key, default=None):
        return self[key] if self.has(key) else default

    def items(self):
        if not isinstance(self.node, yaml.SequenceNode):
            raise self.error("expected a list")
        return [DocNode(v, self.source, self._child_path(i)) for i, v in enumerate(self.node.value)]

    # -- scalars -----------------------------------------------------------
    def value(self):
        return yaml.SafeLoader("").construct_object(self.node, deep=True)

    def str(self):
        if not self.is_scalar():
            raise self.error("expected a string")
        return str(self.node.value)

    def float(self):
        v = self.value()
        if isinstance(v, str):
            # YAML 1.1 resolves "1e9" (no dot) as a string
            try:
                return float(v)
            except ValueError:
                pass
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise self.error(f"expected a number, got {self.node.value!r}")
        return float(v)

    def int(self):
        v = self.value()
        if isinstance(v, bool) or not isinstance(v, int):
            raise self.error(f"expected an integer, got {self.node.value!r}")
        return v

    def bool(self):
        v = self.value()
        if not isinstance(v, bool):
            raise self.error(f"expected true/false, got {self.node.value!r}")
        return v

    def vector(self, n=None):
        items = self.items()
        if n is not None and len(items) != n:
            raise self.error(f"expected {n} numbers, got {len(items)}")
        return np.array([it.float() for it in items])

