from pie_pytorch.polynomial import PolyMatrix
from pie_pytorch.pi_operator import PIOperator, ZFunction
from pie_pytorch.odepde import OdePdeSystem, InputBlock, builtin, validate
from pie_pytorch.pde2pie import PieSystem, convert, dualize, closed_loop
from pie_pytorch.lpi import LpiOptions, LpiProgram
from pie_pytorch.sdp_solver import SdpProblem, SolverOptions
from pie_pytorch.synthesis import (Certificate, check_stability_primal, check_stability_dual, compute_gain_bound,
                                   synthesize_stabilizing, synthesize_hinf, stability_margin)
from pie_pytorch.simulate import SimConfig, run as simulate
