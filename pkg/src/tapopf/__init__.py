"""AC power flow with adjustable transformer taps and phase shifters.

Analytic first and second derivatives of the power balance and branch
currents over ``[Va; Vm; Pg; Qg; tau; theta]``, a Newton power flow and a
primal-dual interior point OPF that treats taps as decision variables.
"""

__version__ = "0.1.0"
