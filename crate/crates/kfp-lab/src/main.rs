fn main() {
    // thin dispatcher; filled in once the scenario layer lands
    eprintln!("kfp-lab: scenario runner not wired yet");
    std::process::exit(2);
}
