fn main() {
    std::process::exit(moe_reward::cli::main());
}
