"""Minimal scaffold for reference environments.

Tracks assertion progress in memory and prints reward lines in the strict
wire format on stdout, flushing after every line.
"""
import os
import socket
import sys

EPS = 1e-9


def fmt_reward(value):
    text = ("%.6f" % value).rstrip("0")
    if text.endswith("."):
        text += "0"
    return text


class Tracker:
    def __init__(self, weights):
        self.weights = dict(weights)
        self.satisfied = set()
        self.launched = False

    def reward(self):
        total = sum(self.weights[a] for a in self.satisfied)
        return min(1.0, round(total, 6))

    def set_satisfied(self, ids):
        self.satisfied = set(i for i in ids if i in self.weights)

    def emit(self, explanation, next_hint):
        value = self.reward()
        hint = "TERMINAL" if value >= 1.0 - EPS else next_hint
        sys.stdout.write("ACTION_EXPLANATION=%s\n" % explanation)
        sys.stdout.write("RL_REWARD=%s, NEXT=%s\n" % (fmt_reward(value), hint))
        sys.stdout.flush()

    def launch(self, next_hint):
        if not self.launched:
            self.launched = True
            self.emit("App launched, home page loaded", next_hint)
        else:
            self.emit("Home page reloaded", next_hint)


def page(title, body):
    return (
        "<!DOCTYPE html><html><head><meta charset='utf-8'>"
        "<meta name='viewport' content='width=410, height=858'>"
        "<title>%s</title></head><body><h1>%s</h1>%s</body></html>" % (title, title, body)
    )


def form(action, field, options=None, label="Go"):
    if options:
        opts = "".join("<option value='%s'>%s</option>" % (o, o) for o in options)
        control = "<select name='%s'>%s</select>" % (field, opts)
    elif field:
        control = "<input name='%s' type='text'>" % field
    else:
        control = ""
    return "<form method='post' action='%s'>%s<button>%s</button></form>" % (action, control, label)


STATUS_TEXT = {200: "OK", 400: "Bad Request", 404: "Not Found", 405: "Method Not Allowed"}


def _params(query):
    # parse_qs without importing urllib.parse keeps interpreter startup short.
    out = {}
    for pair in query.split("&"):
        if not pair:
            continue
        key, _, value = pair.partition("=")
        out.setdefault(_unquote(key), _unquote(value))
    return out


def _unquote(text):
    raw = text.replace("+", " ").encode("utf-8")
    buf = bytearray()
    i = 0
    while i < len(raw):
        if raw[i] == 0x25 and i + 2 < len(raw):
            try:
                buf.append(int(raw[i + 1:i + 3], 16))
                i += 3
                continue
            except ValueError:
                pass
        buf.append(raw[i])
        i += 1
    return buf.decode("utf-8", "replace")


def _read_request(conn):
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(65536)
        if not chunk:
            return None
        data += chunk
    head, _, body = data.partition(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    parts = lines[0].split(" ")
    if len(parts) < 2:
        return None
    headers = {}
    for line in lines[1:]:
        key, _, value = line.partition(":")
        headers[key.strip().lower()] = value.strip()
    length = int(headers.get("content-length") or 0)
    while len(body) < length:
        chunk = conn.recv(65536)
        if not chunk:
            break
        body += chunk
    return parts[0], parts[1], body[:length].decode("utf-8", "replace")


def serve(routes):
    """routes: list of (method, path_or_prefix, handler, is_prefix).

    handler(path, params) -> (status, html) or None for 404.
    One request per connection, handled in arrival order.
    """

    def dispatch(method, target, body):
        path, _, query = target.partition("?")
        params = _params(query)
        if method == "POST":
            params.update(_params(body))
        if path == "/healthz":
            return 200, "ok"
        for m, route, handler, is_prefix in routes:
            if m != method:
                continue
            if path == route or (is_prefix and path.startswith(route)):
                result = handler(path, params)
                if result is not None:
                    return result
        return 404, page("Not found", "")

    port = int(os.environ.get("PORT", "5000"))
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(("0.0.0.0", port))
    server.listen(64)
    while True:
        conn, _ = server.accept()
        try:
            request = _read_request(conn)
            if request is None:
                continue
            status, html = dispatch(*request)
            data = html.encode("utf-8")
            head = "HTTP/1.0 %d %s\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: %d\r\n\r\n" % (
                status, STATUS_TEXT.get(status, "Unknown"), len(data))
            conn.sendall(head.encode("latin-1") + data)
        except OSError:
            pass
        finally:
            conn.close()
