"""Runs one function from a tool definition file.

    tdf_runner.py <tdf_path> <function_name>
        reads one line {"arguments": {...}} from stdin and writes one line
        {"result": <value>} or {"error": "<text>"} to stdout.

    tdf_runner.py --check <tdf_path>
        compiles and loads the file; writes {"result": "ok"} or
        {"error": "<text>"} and exits nonzero on failure.
"""

import json
import math
import sys


def encode(value):
    if value is None or isinstance(value, (bool, int, str)):
        return value
    if isinstance(value, float):
        return value if math.isfinite(value) else repr(value)
    if isinstance(value, complex):
        return str(value)
    if isinstance(value, (list, tuple, set, frozenset)):
        return [encode(v) for v in value]
    if isinstance(value, dict):
        return {str(k): encode(v) for k, v in value.items()}
    return str(value)


def emit(stream, payload):
    stream.write(json.dumps(payload) + "\n")
    stream.flush()


def load(path):
    with open(path, encoding="utf-8") as f:
        source = f.read()
    code = compile(source, path, "exec")
    namespace = {"__name__": "tulip_tool", "__file__": path}
    exec(code, namespace)
    return namespace


def main(argv):
    out = sys.stdout
    # tool code may print; keep stdout for the protocol line
    sys.stdout = sys.stderr
    if len(argv) == 3 and argv[1] == "--check":
        try:
            load(argv[2])
        except SyntaxError as e:
            emit(out, {"error": "SyntaxError: line %s: %s" % (e.lineno, e.msg)})
            return 1
        except Exception as e:
            emit(out, {"error": "%s: %s" % (type(e).__name__, e)})
            return 1
        emit(out, {"result": "ok"})
        return 0
    if len(argv) != 3:
        emit(out, {"error": "usage: tdf_runner.py <tdf_path> <function_name>"})
        return 2
    path, name = argv[1], argv[2]
    try:
        request = json.loads(sys.stdin.readline())
        arguments = request.get("arguments", {})
        namespace = load(path)
        function = namespace.get(name)
        if not callable(function):
            emit(out, {"error": "function `%s` not found in %s" % (name, path)})
            return 0
        result = function(**arguments)
    except Exception as e:
        emit(out, {"error": "%s: %s" % (type(e).__name__, e)})
        return 0
    try:
        emit(out, {"result": encode(result)})
    except (TypeError, ValueError) as e:
        emit(out, {"error": "unserialisable result: %s" % e})
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
