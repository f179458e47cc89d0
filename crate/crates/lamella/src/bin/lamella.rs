fn main() {
    // Filled in once the pipeline modules land.
}
