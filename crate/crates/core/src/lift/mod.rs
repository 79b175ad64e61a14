//! Lifting: abstract stack emulation, basic blocks, and public functions.

pub mod cfg;
pub mod emulate;
pub mod functions;
pub mod paths;
pub mod state;
pub mod value;

pub use cfg::{build_cfg, BasicBlock, BlockId, Cfg};
pub use emulate::{CallEvent, EmulationError, Event, StepOutcome};
pub use functions::{identify_functions, FunctionEntry, FunctionTable};
pub use paths::{emulate_path, explore_function, Exploration};
pub use state::{MachineState, Memory};
pub use value::{AbstractValue, CallDataRef};
