// Training interleaves long-lived replay entries with large short-lived
// matrices; glibc malloc fragments badly under that pattern.
#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

fn main() {
    std::process::exit(colav_cli::run_from(std::env::args_os()));
}
