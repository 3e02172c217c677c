import ast
import re
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DISTRIBUTIONS = {"PIL": "pillow", "dotenv": "python-dotenv"}


def declared() -> set[str]:
    names = set()
    for line in (ROOT / "requirements.txt").read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            names.add(re.split(r"[<>=!~ ]", line, maxsplit=1)[0].lower())
    return names


def imported_modules(path: Path) -> set[str]:
    modules = set()
    for node in ast.walk(ast.parse(path.read_text(), filename=str(path))):
        if isinstance(node, ast.Import):
            modules.update(alias.name.split(".")[0] for alias in node.names)
        elif isinstance(node, ast.ImportFrom) and node.level == 0 and node.module:
            modules.add(node.module.split(".")[0])
    return modules


class TestRequirements:
    def test_third_party_imports_are_declared(self):
        packages = [p for p in ROOT.iterdir() if (p / "__init__.py").is_file()]
        local = {p.name for p in packages} | {p.stem for p in ROOT.glob("*.py")}
        sources = [*ROOT.glob("*.py"), *(f for p in packages for f in p.rglob("*.py"))]
        missing = set()
        for path in sources:
            for module in imported_modules(path) - local - set(sys.stdlib_module_names):
                if DISTRIBUTIONS.get(module, module).lower() not in declared():
                    missing.add(f"{module} ({path.relative_to(ROOT)})")
        assert not missing

    def test_click_is_declared_for_the_cli(self):
        assert "click" in imported_modules(ROOT / "main.py")
        assert "click" in declared()
