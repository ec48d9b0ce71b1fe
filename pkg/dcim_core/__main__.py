"""Entry point for ``python -m dcim_core``."""

import sys

_MISSING = []
for _mod in ("numpy", "scipy", "networkx", "yaml", "msgpack"):
    try:
        __import__(_mod)
    except ImportError:
        _MISSING.append({"yaml": "pyyaml"}.get(_mod, _mod))

if _MISSING:
    print(
        "ERROR: missing Python dependencies: " + ", ".join(_MISSING) + "\n"
        "\n"
        "Install them with one of:\n"
        "  pip install " + " ".join(_MISSING) + "\n"
        "  pip install dcim-core\n"
        "  conda install " + " ".join(_MISSING),
        file=sys.stderr,
    )
    sys.exit(1)

from ._cli import main

if __name__ == "__main__":
    sys.exit(main())
