fn main() {
    eprintln!("faultlab: not wired up yet");
    std::process::exit(2);
}
