from grid.faultModel import FaultKind
# dict of fault names to fault kinds
faultNames = {
    # line de-energized
    'three_phase': FaultKind.THREE_PHASE,
    'three-phase': FaultKind.THREE_PHASE,
    '3ph': FaultKind.THREE_PHASE,

    # one phase to ground
    'single_phase': FaultKind.SINGLE_PHASE,
    'single-phase': FaultKind.SINGLE_PHASE,
    '1ph': FaultKind.SINGLE_PHASE,
}

# translates a name to a fault kind
def nameToFaultKind(name) -> FaultKind:
    if isinstance(name, FaultKind):
        return name
    name = str(name).lower()

    # check if the name is in the dict
    if name in faultNames:
        return faultNames[name]
    else:
        raise ValueError('Invalid fault kind:' + name)

# a dict of solver names and the method they select
methodNames = {
    'exact': 'exact',
    'modal': 'exact',
    'perturbative': 'perturbative',
    'approx': 'perturbative',
}

# translates a name to a solver method
def nameToMethod(name: str) -> str:
    name = name.lower()

    if name in methodNames:
        return methodNames[name]
    else:
        raise ValueError('Invalid solver method:' + name)

