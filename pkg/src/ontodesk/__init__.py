"""ontodesk: desk-scale ontology-driven decision support."""

__version__ = "0.1.0"

from .kb import (  # noqa: F401
    Assertion,
    ClassDef,
    ClassPattern,
    Ind,
    Individual,
    Ontology,
    PropPattern,
    Provenance,
    RelationDef,
    assert_fact,
    is_instance_of,
    query,
    validate,
)
from .kbfile import dump_ontology, load_ontology  # noqa: F401
