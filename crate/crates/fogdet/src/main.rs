fn main() {
    // Placeholder until the pipeline module lands.
}
