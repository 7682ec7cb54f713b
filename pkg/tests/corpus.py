"""A fixed 200-string SMILES corpus: hand-picked structures plus seeded
random graphs from the synthetic generator."""

from specret import synthetic

HANDPICKED = [
    "C", "CC", "CCO", "CCCO", "OCC(O)CO", "CC(=O)O", "CC(=O)OC", "CC#N", "C=CC=C",
    "C#CC", "CC(C)(C)C", "CC(C)C(=O)N", "NCC(=O)O", "CN(C)C", "CSC", "CS(=O)(=O)C",
    "OP(=O)(O)O", "FC(F)(F)Cl", "BrCCBr", "ICI", "ClC(Cl)Cl", "OB(O)O",
    "C1CC1", "C1CCCCC1", "C1CCOC1", "C1CCNCC1", "O=C1CCCC1", "C1=CCCCC1",
    "c1ccccc1", "Cc1ccccc1", "Oc1ccccc1", "Nc1ccccc1", "c1ccncc1", "c1ccoc1",
    "c1ccsc1", "c1cc[nH]c1", "c1ccc2ccccc2c1", "c1ccc(cc1)O", "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C(=O)N2C)C", "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "C1CC2CCC1C2", "C12C3C4C1C5C2C3C45", "O=C(O)c1ccccc1", "c1ccc(-c2ccccc2)cc1",
    "[NH4+]", "[O-]C(=O)C", "C[N+](C)(C)C", "[Cl-].[NH4+]", "CCO.O",
    "C(=O)=O", "N#N", "O=O", "[H][H]", "S", "[OH-]", "C[S-]", "C1=CC=CC=C1",
    "OCCN(CCO)CCO", "CCOC(=O)CC(=O)OCC",
]


def smiles_corpus(size: int = 200) -> list[str]:
    extra = synthetic.molecule_corpus(size - len(HANDPICKED), seed=2024, exclude=HANDPICKED)
    return HANDPICKED + extra
