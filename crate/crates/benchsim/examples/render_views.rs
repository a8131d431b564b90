// Prints both camera views of a fresh press_button scene as ASCII art.

use benchsim::{Env, Image, InitMode, TaskConfig, TaskId};

fn ascii(img: &Image) -> String {
    let ramp = [' ', '.', ':', '+', '#'];
    let mut out = String::new();
    for r in 0..img.height {
        for c in 0..img.width {
            let v = img.at(r, c).clamp(0.0, 1.0);
            out.push(ramp[((v * 4.0).round()) as usize]);
        }
        out.push('\n');
    }
    out
}

/// Returns the two renderings, front first.
pub fn run_example() -> (String, String) {
    let cfg = TaskConfig::new(TaskId::PressButton).with_init(InitMode::Perturbed);
    let (env, obs) = Env::reset(cfg, 5);
    println!("joints {:?}, distance to target {:.3} m", env.state.joints, env.target_distance());
    (ascii(&obs.front), ascii(&obs.wrist))
}

#[allow(dead_code)]
fn main() {
    let (front, wrist) = run_example();
    println!("front\n{front}\nwrist\n{wrist}");
}
