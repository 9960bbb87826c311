# Generated environment: __TITLE__
import json
import os
import socket
import sys

CONFIG = json.loads(r'''__CONFIG__''')
SLOTS = CONFIG["slots"]
WEIGHTS = CONFIG["weights"]
SABOTAGED = CONFIG.get("sabotaged", False)

# In-memory backend state.
state = {"selected": {}, "launched": False}


def calculate_reward():
    total = 0.0
    for i, slot in enumerate(SLOTS):
        if SABOTAGED and i == len(SLOTS) - 1:
            continue
        if state["selected"].get(slot["name"]) == slot["answer"]:
            total += WEIGHTS[i]
    return min(1.0, round(total, 6))


def fmt(value):
    text = ("%.6f" % value).rstrip("0")
    return text + "0" if text.endswith(".") else text


def emit(explanation, next_hint):
    value = calculate_reward()
    if value >= 1.0 - 1e-9:
        next_hint = "TERMINAL"
    sys.stdout.write("ACTION_EXPLANATION=%s\n" % explanation)
    sys.stdout.write("RL_REWARD=%s, NEXT=%s\n" % (fmt(value), next_hint))
    sys.stdout.flush()


def next_hint():
    for slot in SLOTS:
        if state["selected"].get(slot["name"]) != slot["answer"]:
            return "choose %s" % slot["label"]
    return "review"


def render(body):
    with open("templates/index.html", encoding="utf-8") as fh:
        shell = fh.read()
    with open("static/style.css", encoding="utf-8") as fh:
        css = fh.read()
    return shell.replace("{{title}}", CONFIG["title"]).replace("{{style}}", css).replace("{{content}}", body)


def home(params):
    if not state["launched"]:
        state["launched"] = True
        emit("App launched, home page loaded", next_hint())
    else:
        emit("Home page reloaded", next_hint())
    parts = []
    for slot in SLOTS:
        opts = "".join("<option value='%s'>%s</option>" % (o, o) for o in slot["options"])
        current = state["selected"].get(slot["name"], "")
        parts.append(
            "<form class='card' method='post' action='/select/%s'><label>%s</label>"
            "<select name='value'>%s</select><button>Choose</button><span>%s</span></form>"
            % (slot["name"], slot["label"], opts, current)
        )
    return 200, render("".join(parts))


def select(name, params):
    slot = next((s for s in SLOTS if s["name"] == name), None)
    if slot is None:
        return 404, render("<p>Not found</p>")
    value = params.get("value", "")
    if value not in slot["options"]:
        return 400, render("<p>Unknown option</p>")
    state["selected"][name] = value
    emit("User chose %s for %s" % (value, slot["label"]), next_hint())
    return 200, render("<p>%s: %s</p><a href='/'>Back</a>" % (slot["label"], value))


def unquote(text):
    raw = text.replace("+", " ").encode("utf-8")
    out = bytearray()
    i = 0
    while i < len(raw):
        if raw[i] == 0x25 and i + 2 < len(raw):
            try:
                out.append(int(raw[i + 1:i + 3], 16))
                i += 3
                continue
            except ValueError:
                pass
        out.append(raw[i])
        i += 1
    return out.decode("utf-8", "replace")


def parse_form(text):
    out = {}
    for pair in text.split("&"):
        if pair:
            key, _, value = pair.partition("=")
            out.setdefault(unquote(key), unquote(value))
    return out


def handle(method, target, body):
    path, _, query = target.partition("?")
    params = parse_form(query)
    if method == "POST":
        params.update(parse_form(body))
    if path == "/healthz":
        return 200, "ok"
    if method == "GET" and path == "/":
        return home(params)
    if method == "POST" and path.startswith("/select/"):
        return select(path[len("/select/"):], params)
    return 404, render("<p>Not found</p>")


def read_request(conn):
    data = b""
    while b"\r\n\r\n" not in data:
        chunk = conn.recv(65536)
        if not chunk:
            return None
        data += chunk
    head, _, body = data.partition(b"\r\n\r\n")
    lines = head.decode("latin-1").split("\r\n")
    method, target = (lines[0].split(" ") + [""])[:2]
    length = 0
    for line in lines[1:]:
        key, _, value = line.partition(":")
        if key.strip().lower() == "content-length":
            length = int(value.strip() or 0)
    while len(body) < length:
        chunk = conn.recv(65536)
        if not chunk:
            break
        body += chunk
    return method, target, body[:length].decode("utf-8", "replace")


def main():
    port = int(os.environ.get("PORT", "5000"))
    server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    server.bind(("0.0.0.0", port))
    server.listen(64)
    reasons = {200: "OK", 400: "Bad Request", 404: "Not Found"}
    while True:
        conn, _ = server.accept()
        try:
            request = read_request(conn)
            if request is None:
                continue
            status, html = handle(*request)
            data = html.encode("utf-8")
            head = "HTTP/1.0 %d %s\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: %d\r\n\r\n" % (
                status, reasons.get(status, "Error"), len(data))
            conn.sendall(head.encode("latin-1") + data)
        except OSError:
            pass
        finally:
            conn.close()


if __name__ == "__main__":
    main()
