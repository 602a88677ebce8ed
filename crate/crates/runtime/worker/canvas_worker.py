"""Stateful interpreter worker for canvas sessions.

Speaks newline-delimited JSON on stdin/stdout: announces {"ready": "1"},
then answers execute / snapshot / restore / ping / shutdown requests in order.
"""

import ast
import base64
import builtins
import importlib
import io
import json
import pickle
import sys
import traceback
import types

try:
    import dill
except ImportError:  # functions are then skipped on fork
    dill = None

PROTOCOL = "1"
MAX_FRAME = 64 * 1024 * 1024
HELPERS = frozenset({"canvas_display"})
MIMES = frozenset(
    {"stream/stdout", "stream/stderr", "text/plain", "image/png", "application/json"}
)

_wire_in = sys.stdin.buffer
_wire_out = sys.stdout.buffer
_rich = None


def canvas_display(mime, data):
    """Attach a rich output item to the running execution."""
    if mime not in MIMES:
        raise ValueError("unsupported mime type: %r" % (mime,))
    if mime == "image/png":
        if isinstance(data, (bytes, bytearray)):
            data = base64.b64encode(bytes(data)).decode("ascii")
        else:
            base64.b64decode(data, validate=True)
    elif mime == "application/json" and not isinstance(data, str):
        data = json.dumps(data)
    elif not isinstance(data, str):
        data = str(data)
    if _rich is None:
        raise RuntimeError("canvas_display called outside an execution")
    _rich.append({"mime": mime, "data": data})


def fresh_namespace():
    return {
        "__name__": "__main__",
        "__builtins__": builtins,
        "canvas_display": canvas_display,
    }


namespace = fresh_namespace()


def error_info(exc):
    tb = exc.__traceback__
    # drop the worker's own frames, keep user frames
    while tb is not None and tb.tb_frame.f_code.co_filename != "<cell>":
        tb = tb.tb_next
    lines = traceback.format_exception(type(exc), exc, tb)
    return {
        "etype": type(exc).__name__,
        "message": str(exc),
        "traceback": "".join(lines),
    }


def execute(code):
    global _rich
    stdout, stderr = io.StringIO(), io.StringIO()
    rich = []
    result_repr = None
    error = None
    saved = sys.stdout, sys.stderr
    sys.stdout, sys.stderr = stdout, stderr
    _rich = rich
    try:
        tree = ast.parse(code, "<cell>", "exec")
        last = None
        if tree.body and isinstance(tree.body[-1], ast.Expr):
            last = ast.Expression(tree.body.pop().value)
        exec(compile(tree, "<cell>", "exec"), namespace)
        if last is not None:
            value = eval(compile(last, "<cell>", "eval"), namespace)
            if value is not None:
                result_repr = repr(value)
    except BaseException as exc:  # user code must never take the worker down
        error = error_info(exc)
    finally:
        sys.stdout, sys.stderr = saved
        _rich = None
    payload = {
        "stdout": stdout.getvalue(),
        "stderr": stderr.getvalue(),
        "result_repr": result_repr,
        "rich": rich,
        "error": error,
    }
    return error is None, payload


def user_bindings():
    return {
        k: v
        for k, v in namespace.items()
        if not (k.startswith("__") and k.endswith("__")) and k not in HELPERS
    }


def dump_function(fn):
    # globals referenced by the function are captured, then rebound on restore
    return dill.dumps(fn, recurse=True)


def load_function(data, target):
    fn = dill.loads(data)
    rebound = types.FunctionType(
        fn.__code__, target, fn.__name__, fn.__defaults__, fn.__closure__
    )
    rebound.__kwdefaults__ = fn.__kwdefaults__
    rebound.__doc__ = fn.__doc__
    return rebound


def snapshot():
    values, functions, modules, skipped = {}, {}, {}, []
    for name, value in user_bindings().items():
        if isinstance(value, types.ModuleType):
            modules[name] = value.__name__
            continue
        if isinstance(value, types.FunctionType):
            if dill is None:
                skipped.append(name)
                continue
            try:
                functions[name] = dump_function(value)
            except Exception:
                skipped.append(name)
            continue
        try:
            pickle.dumps(value)
        except Exception:
            skipped.append(name)
            continue
        values[name] = value
    state = {"values": values, "functions": functions, "modules": modules}
    try:
        # one pickle for all values keeps aliasing between names intact
        blob = pickle.dumps(state)
    except Exception:
        kept = {}
        for name, value in values.items():
            try:
                pickle.dumps({name: value})
                kept[name] = value
            except Exception:
                skipped.append(name)
        state["values"] = kept
        blob = pickle.dumps(state)
    return True, {
        "blob": base64.b64encode(blob).decode("ascii"),
        "skipped": sorted(skipped),
    }


def restore(blob):
    global namespace
    try:
        state = pickle.loads(base64.b64decode(blob, validate=True))
        values = state["values"]
        functions = state.get("functions", {})
        modules = state["modules"]
    except Exception as exc:
        return False, {"skipped": [], "error": error_info(exc)}
    restored = fresh_namespace()
    skipped = []
    for name, path in modules.items():
        try:
            restored[name] = importlib.import_module(path)
        except Exception:
            skipped.append(name)
    restored.update(values)
    for name, data in functions.items():
        try:
            restored[name] = load_function(data, restored)
        except Exception:
            skipped.append(name)
    namespace = restored
    return True, {"skipped": sorted(skipped)}


def shrink(payload):
    """Truncate text fields until the frame fits under the size cap."""
    note = "\n[output truncated: frame exceeded %d bytes]\n" % MAX_FRAME
    budget = MAX_FRAME // 4
    for key in ("stdout", "stderr", "result_repr"):
        value = payload.get(key)
        if isinstance(value, str) and len(value) > budget:
            payload[key] = value[:budget]
    payload["rich"] = [item for item in payload.get("rich", []) if len(item["data"]) <= budget]
    payload["stderr"] = (payload.get("stderr") or "") + note
    return payload


def send(obj):
    line = json.dumps(obj, ensure_ascii=True).encode("ascii") + b"\n"
    if len(line) > MAX_FRAME and isinstance(obj.get("payload"), dict):
        obj["payload"] = shrink(obj["payload"])
        line = json.dumps(obj, ensure_ascii=True).encode("ascii") + b"\n"
    _wire_out.write(line)
    _wire_out.flush()


def main():
    send({"ready": PROTOCOL})
    last_id = 0
    while True:
        line = _wire_in.readline(MAX_FRAME + 1)
        if not line:
            return 1
        if len(line) > MAX_FRAME:
            return 3
        try:
            request = json.loads(line)
            req_id = request["id"]
            op = request["op"]
            payload = request.get("payload") or {}
        except Exception:
            return 2
        if not isinstance(req_id, int) or req_id <= last_id:
            return 2
        last_id = req_id
        if op == "execute":
            ok, body = execute(payload.get("code", ""))
        elif op == "snapshot":
            ok, body = snapshot()
        elif op == "restore":
            ok, body = restore(payload.get("blob", ""))
        elif op == "ping":
            ok, body = True, {"protocol": PROTOCOL}
        elif op == "shutdown":
            send({"id": req_id, "ok": True, "payload": {}})
            return 0
        else:
            return 2
        send({"id": req_id, "ok": ok, "payload": body})


if __name__ == "__main__":
    sys.exit(main())
