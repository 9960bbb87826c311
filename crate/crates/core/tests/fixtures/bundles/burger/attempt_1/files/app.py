from envkit import Tracker, form, page, serve

MENU = ["beef_burger", "chicken_burger", "fish_burger", "veggie_burger", "double_cheeseburger"]
MODIFIERS = ["onion", "lettuce", "tomato", "pickles"]
TARGET = "beef_burger"

tracker = Tracker({"burger_in_order": 0.5, "no_onion": 0.5})
cart = []


def home(path, params):
    with open("templates/index.html", encoding="utf-8") as fh:
        shell = fh.read()
    tracker.launch("add the beef burger to the cart")
    body = form("/cart/add", "item", MENU, "Add") + form("/cart/remove-modifier", "modifier", MODIFIERS, "Remove")
    body += form("/checkout", None, None, "Checkout")
    return 200, shell.replace("{{content}}", body)


def describe():
    return ", ".join("%s(%s)" % (i["item"], "+".join(sorted(i["mods"]))) for i in cart) or "empty"


def add(path, params):
    item = params.get("item", "")
    if item not in MENU:
        return 400, page("Unknown item", "")
    cart.append({"item": item, "mods": set(MODIFIERS)})
    tracker.emit("Added %s to cart" % item, "customise toppings then check out")
    return 200, page("Cart", "<p>%s</p>" % describe())


def remove_modifier(path, params):
    mod = params.get("modifier", "")
    if mod not in MODIFIERS:
        return 400, page("Unknown modifier", "")
    if cart:
        cart[-1]["mods"].discard(mod)
    tracker.emit("Removed %s from last item" % mod, "check out")
    return 200, page("Cart", "<p>%s</p>" % describe())


def checkout(path, params):
    burgers = [i for i in cart if i["item"] == TARGET]
    satisfied = []
    if burgers:
        satisfied.append("burger_in_order")
        if all("onion" not in b["mods"] for b in burgers):
            satisfied.append("no_onion")
    tracker.set_satisfied(satisfied)
    tracker.emit("Checked out order: %s" % describe(), "fix the order and check out again")
    return 200, page("Order confirmation", "<p>%s</p>" % describe())


if __name__ == "__main__":
    serve([
        ("GET", "/", home, False),
        ("POST", "/cart/add", add, False),
        ("POST", "/cart/remove-modifier", remove_modifier, False),
        ("POST", "/checkout", checkout, False),
    ])
