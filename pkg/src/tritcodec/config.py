"""Plain-text key=value configuration files.

One key per line, ``#`` starts a comment, values keep their last
assignment.  Typed accessors raise ParameterError with the offending key
so CLI users get actionable messages.
"""

from .errors import ParameterError


def parse_kv(text):
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParameterError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ParameterError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def load_kv(path):
    with open(path, "r", encoding="utf-8") as fh:
        return parse_kv(fh.read())


class KvReader:
    """Dict wrapper with typed lookups and defaults."""

    def __init__(self, values):
        self.values = dict(values)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def get_int(self, key, default):
        return self._convert(key, default, int)

    def get_float(self, key, default):
        return self._convert(key, default, float)

    def get_bool(self, key, default):
        raw = self.values.get(key)
        if raw is None:
            return default
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ParameterError(f"{key}: expected a boolean, got {raw!r}")

    def get_floats(self, key, default):
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return [float(tok) for tok in raw.split(",") if tok.strip()]
        except ValueError as exc:
            raise ParameterError(f"{key}: expected comma-separated floats") from exc

    def get_choice(self, key, default, choices):
        raw = self.values.get(key, default)
        if raw not in choices:
            raise ParameterError(f"{key}: expected one of {choices}, got {raw!r}")
        return raw

    def _convert(self, key, default, cast):
        raw = self.values.get(key)
        if raw is None:
            return default
        try:
            return cast(raw)
        except ValueError as exc:
            raise ParameterError(f"{key}: cannot parse {raw!r}") from exc
