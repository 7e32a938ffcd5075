fn main() {
    // Placeholder; subcommands land with the pipeline modules.
}
