fn main() {
    std::process::exit(tracebench_core::plugin::native::main());
}
