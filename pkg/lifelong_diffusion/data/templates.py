"""Prompt templates with a single concept slot."""
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Union

from ..errors import ConfigError

_DEFAULT_TEMPLATES = Path(__file__).parent / "templates.txt"
_SLOT = "{}"


@dataclass(frozen=True)
class PromptTemplate:
    template: str
    template_id: int

    def __post_init__(self) -> None:
        if self.template.count(_SLOT) != 1:
            raise ConfigError(
                f"templates[{self.template_id}]",
                f"expected exactly one {_SLOT} slot in {self.template!r}",
            )

    def fill(self, concept: str) -> str:
        return self.template.replace(_SLOT, concept)


def load_templates(path: Optional[Union[str, Path]] = None) -> List[PromptTemplate]:
    """Read one template per non-blank line."""
    source = Path(path) if path is not None else _DEFAULT_TEMPLATES
    lines = source.read_text(encoding="utf-8").splitlines()
    return [
        PromptTemplate(template=line.strip(), template_id=index)
        for index, line in enumerate(line for line in lines if line.strip())
    ]
