from argparse import ArgumentParser
from importlib import import_module
from pkgutil import walk_packages
from typing import Any, Callable

from safenet import commands

Register = Callable[[Any, list[ArgumentParser]], None]

registered: list[Register] = []
for module_info in walk_packages(commands.__path__, f"{commands.__name__}."):
    module = import_module(module_info.name)
    register = getattr(module, "register", None)
    if register is not None:
        registered.append(register)
