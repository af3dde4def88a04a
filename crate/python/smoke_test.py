"""End-to-end smoke test of the `ebc` Python extension.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop -m crates/python/Cargo.toml

or build it with cargo and point EBC_LIB at the shared library:

    cargo build -p ebc-python --release --features extension-module
    EBC_LIB=target/release/libebc.so python python/smoke_test.py
"""

import importlib.machinery
import importlib.util
import os
import sys
import tempfile


def load_ebc():
    path = os.environ.get("EBC_LIB")
    if not path:
        import ebc

        return ebc
    loader = importlib.machinery.ExtensionFileLoader("ebc", path)
    spec = importlib.util.spec_from_loader("ebc", loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    sys.modules["ebc"] = module
    return module


def main():
    ebc = load_ebc()
    assert ebc.apps() == ["coffeeshop", "fastfood", "trips"], ebc.apps()

    # Record "Order an Americano" by hand: open the drink, set quantity 1,
    # confirm, add to the order.
    session = ebc.Session("coffeeshop")
    assert session.screen_id == "menu"
    labels = [e["text"] for e in session.interactive()]
    assert "Americano" in labels, labels
    session.click(labels.index("Americano"))
    field = next(e["index"] for e in session.interactive() if e["editable"])
    session.type(field, "1")
    session.enter()
    add = next(e["index"] for e in session.interactive() if e["text"] == "Add to Order")
    session.click(add)
    assert session.check_goal("cart_contains(item=Americano, qty=1)")

    demo = session.finish("Order an Americano")
    assert len(demo) == 4
    encoded = demo.encode()
    assert len(encoded) == 4 and encoded.steps()[0]["text"] == "Americano"

    function = ebc.generate(encoded)
    assert function.name == "order_drink", function.signature
    assert "fn order_drink(drink, quantity)" in function.source

    run = function.replay({"drink": "Mocha", "quantity": 3})
    assert run["success"], run
    assert run["variables"]["cart"] == {"Mocha": 3}, run["variables"]
    assert all(run["explanations"])

    try:
        function.replay({"drink": "Tea"})
    except ebc.EbcError as e:
        assert "must be one of" in str(e)
    else:
        raise AssertionError("an unknown drink must be rejected")

    library = ebc.Library()
    library.add(function)
    library.add(ebc.generate(ebc.Demonstration.bundled("coffeeshop_checkout_takeaway").encode()))
    plan = library.route("Order two Lattes")
    assert plan["calls"] == [{"function": "order_drink", "args": {"drink": "Latte", "quantity": "2"}}], plan
    outcome = library.run("Order two Lattes")
    assert outcome["success"] and outcome["variables"]["cart"] == {"Latte": 2}, outcome

    with tempfile.TemporaryDirectory() as tmp:
        library.save(tmp)
        assert sorted(ebc.Library.load(tmp).names()) == sorted(library.names())

    canonical = ebc.format_script(function.source.split("\n\n", 1)[1])
    assert ebc.format_script(canonical) == canonical
    assert ebc.check_script("fn f() {\n  back()\n}\n"), "missing explanation must be reported"

    xml = (
        '<hierarchy screen="s"><node class="android.widget.FrameLayout" bounds="[0,0][1080,1920]">'
        '<node class="android.widget.Button" text="Cancel" resource-id="btn_cancel" clickable="true"/>'
        '<node class="android.widget.Button" text="Save" resource-id="btn_save" clickable="true"/>'
        "</node></hierarchy>"
    )
    assert ebc.map_selector(xml, text="Save")["index"] == 1

    report = ebc.evaluate("coffeeshop", trials=2)
    assert report["overall"]["task_sr"] == 1.0, report["overall"]

    print("smoke test passed")


if __name__ == "__main__":
    main()
