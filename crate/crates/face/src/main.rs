use std::io::Write as _;

fn init_logging() {
    let level = match std::env::var("FACE_LOG").as_deref() {
        Ok("quiet") => log::LevelFilter::Off,
        Ok("debug") => log::LevelFilter::Debug,
        _ => log::LevelFilter::Info,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level(), record.args()))
        .init();
}

fn main() {
    init_logging();
    let mut stdout = std::io::stdout().lock();
    let code = face::cli::main_with_args(std::env::args(), &mut stdout);
    let _ = stdout.flush();
    std::process::exit(code);
}
